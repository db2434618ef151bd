import pandas as pd
sales = pd.read_csv('sales.csv')
table = sales.pivot_table(index='region', columns='product', values='units', aggfunc='sum')
table = table.fillna(0)
print(table)
