import pandas as pd
sales = pd.read_csv('sales.csv')
summary = sales.groupby(['region', 'product']).agg({'units': 'sum', 'price': 'mean'})
summary = summary.reset_index()
summary.head()
