import pandas as pd
students = pd.read_csv('students.csv')
students['major'].value_counts()
students.info()
