import pandas as pd
weather = pd.read_csv('weather.csv')
weather = (
    weather
    .assign(temp_f=weather['temp'] * 9 / 5 + 32)
    .sort_values('temp_f')
    .reset_index(drop=True)
)
