import pandas as pd
scores = pd.read_csv('scores.csv')
average = scores.groupby('name')['score'].mean()
