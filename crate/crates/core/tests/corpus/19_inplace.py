import pandas as pd
df = pd.read_csv('weather.csv')
df.sort_values('temp', inplace=True)
df.dropna(inplace=True)
df.tail(2)
