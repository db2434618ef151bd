import pandas as pd
df = pd.DataFrame({"attr_1": [3, 1, 2], "attr_2": ["c", "a", "b"], "attr_3": [0.5, 0.1, 0.9]})
merge_df = df[["attr_1", "attr_2"]].sort_values("attr_1")
