//! Random linear dataframe scripts for property tests.

use proptest::prelude::*;

const VARS: &[&str] = &["df", "sales", "t2", "out"];
const FILES: &[&str] = &["a", "b", "c"];

/// Chain links applicable to any table.
const LINKS: &[&str] = &[
    ".dropna()",
    ".sort_values('a')",
    ".sort_values(by=['a', 'b'], ascending=False)",
    "[['a', 'b']]",
    "['a']",
    ".groupby('k')",
    ".mean()",
    ".agg({'a': 'sum'})",
    ".head(3)",
    ".rename(columns={'a': 'b'})",
    ".reset_index(drop=True)",
    ".query('a > 0')",
    ".fillna(0)",
    ".astype({'a': 'float64'})",
    ".loc[:, ['a']]",
    ".iloc[:2]",
    ".apply(lambda r: r * 2)",
];

#[derive(Debug, Clone)]
pub enum Stmt {
    Load { var: usize, file: usize },
    Chain { var: usize, src: usize, links: Vec<usize>, multiline: bool },
    Mask { var: usize, src: usize },
    Merge { var: usize, left: usize, right: usize },
    Show { src: usize, links: Vec<usize> },
    Print { src: usize, link: usize },
    AddColumn { src: usize },
    InPlace { src: usize },
    Plot { src: usize },
    Scalar,
    Comment,
    Blank,
}

fn stmt() -> impl Strategy<Value = Stmt> {
    let v = 0..VARS.len();
    let links = prop::collection::vec(0..LINKS.len(), 1..4);
    prop_oneof![
        3 => (v.clone(), 0..FILES.len()).prop_map(|(var, file)| Stmt::Load { var, file }),
        4 => (v.clone(), v.clone(), links.clone(), any::<bool>())
            .prop_map(|(var, src, links, multiline)| Stmt::Chain { var, src, links, multiline }),
        1 => (v.clone(), v.clone()).prop_map(|(var, src)| Stmt::Mask { var, src }),
        1 => (v.clone(), v.clone(), v.clone()).prop_map(|(var, left, right)| Stmt::Merge { var, left, right }),
        1 => (v.clone(), links).prop_map(|(src, links)| Stmt::Show { src, links }),
        1 => (v.clone(), 0..LINKS.len()).prop_map(|(src, link)| Stmt::Print { src, link }),
        1 => v.clone().prop_map(|src| Stmt::AddColumn { src }),
        1 => v.clone().prop_map(|src| Stmt::InPlace { src }),
        1 => v.prop_map(|src| Stmt::Plot { src }),
        1 => Just(Stmt::Scalar),
        1 => Just(Stmt::Comment),
        1 => Just(Stmt::Blank),
    ]
}

/// Renders statements, redirecting table references to loaded variables and
/// loading one first when none is.
pub fn render(stmts: &[Stmt]) -> String {
    let mut out = String::from("import pandas as pd\nimport matplotlib.pyplot as plt\n");
    let mut loaded: Vec<usize> = Vec::new();
    let pick = |loaded: &Vec<usize>, i: usize| VARS[loaded[i % loaded.len()]];
    for s in stmts {
        if loaded.is_empty() && !matches!(s, Stmt::Load { .. } | Stmt::Scalar | Stmt::Comment | Stmt::Blank) {
            out.push_str("df = pd.read_csv('a.csv')\n");
            loaded.push(0);
        }
        let line = match s {
            Stmt::Load { var, file } => {
                if !loaded.contains(var) {
                    loaded.push(*var);
                }
                format!("{} = pd.read_csv('{}.csv')", VARS[*var], FILES[*file])
            }
            Stmt::Chain { var, src, links, multiline } => {
                let src = pick(&loaded, *src);
                let links: Vec<&str> = links.iter().map(|l| LINKS[*l]).collect();
                if !loaded.contains(var) {
                    loaded.push(*var);
                }
                if *multiline {
                    format!("{} = (\n    {src}\n    {}\n)", VARS[*var], links.join("\n    "))
                } else {
                    format!("{} = {src}{}", VARS[*var], links.concat())
                }
            }
            Stmt::Mask { var, src } => {
                let src = pick(&loaded, *src);
                if !loaded.contains(var) {
                    loaded.push(*var);
                }
                format!("{} = {src}[({src}['a'] > 1) & ({src}['b'] != 'x')]", VARS[*var])
            }
            Stmt::Merge { var, left, right } => {
                let (l, r) = (pick(&loaded, *left), pick(&loaded, *right));
                if !loaded.contains(var) {
                    loaded.push(*var);
                }
                format!("{} = pd.merge({l}, {r}, on='k', how='inner')", VARS[*var])
            }
            Stmt::Show { src, links } => {
                let links: Vec<&str> = links.iter().map(|l| LINKS[*l]).collect();
                format!("{}{}", pick(&loaded, *src), links.concat())
            }
            Stmt::Print { src, link } => format!("print({}{})", pick(&loaded, *src), LINKS[*link]),
            Stmt::AddColumn { src } => {
                let s = pick(&loaded, *src);
                format!("{s}['c'] = {s}['a'] * 2")
            }
            Stmt::InPlace { src } => format!("{}.dropna(inplace=True)", pick(&loaded, *src)),
            Stmt::Plot { src } => format!("{}.plot(x='a', kind='line')", pick(&loaded, *src)),
            Stmt::Scalar => "n = 1 + 2 * 3".to_string(),
            Stmt::Comment => "# reserved-looking names: __wg0 __wg1".to_string(),
            Stmt::Blank => String::new(),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn script() -> impl Strategy<Value = String> {
    prop::collection::vec(stmt(), 1..10).prop_map(|s| render(&s))
}

/// Sorted, deduplicated byte cut points strictly inside `text`, on char
/// boundaries.
pub fn cuts(text: &str, raw: &[usize]) -> Vec<usize> {
    if text.len() < 2 {
        return Vec::new();
    }
    let mut out: Vec<usize> = raw
        .iter()
        .map(|r| 1 + r % (text.len() - 1))
        .filter(|c| text.is_char_boundary(*c))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

pub fn chunks_at<'t>(text: &'t str, cuts: &[usize]) -> Vec<&'t str> {
    let mut out = Vec::new();
    let mut last = 0;
    for &c in cuts {
        out.push(&text[last..c]);
        last = c;
    }
    out.push(&text[last..]);
    out
}
