//! Pairwise key and label scoring.

use strsim::levenshtein;

use super::lexicon::Lexicons;
use super::Category;

/// Split on separators, camelCase humps and letter/digit changes; lowercased.
pub fn tokens(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if !cur.is_empty() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            let boundary = (prev.is_lowercase() && c.is_uppercase())
                || (prev.is_alphabetic() != c.is_alphabetic())
                || (prev.is_uppercase() && c.is_uppercase() && next_lower);
            if boundary {
                out.push(std::mem::take(&mut cur));
            }
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out.into_iter().map(|t| t.to_lowercase()).collect()
}

/// Case-fold and drop `_`, `-` and spaces.
pub fn fold(s: &str) -> String {
    s.chars().filter(|c| !matches!(c, '_' | '-' | ' ')).flat_map(char::to_lowercase).collect()
}

const TRUE_MARK: &str = "#t";
const FALSE_MARK: &str = "#f";

fn polar_mark(lex: &Lexicons, word: &str) -> Option<&'static str> {
    lex.polarity(word).map(|p| if p { TRUE_MARK } else { FALSE_MARK })
}

/// Rewrite `not X` to the antonym of X and boolean words to their polarity.
pub fn logical_form(tokens: &[String], lex: &Lexicons) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i].as_str();
        if t == "not" && i + 1 < tokens.len() {
            let x = tokens[i + 1].as_str();
            if let Some(p) = lex.polarity(x) {
                out.push(if p { FALSE_MARK } else { TRUE_MARK }.to_string());
                i += 2;
                continue;
            }
            if let Some(a) = lex.antonym(x) {
                out.push(polar_mark(lex, a).map(str::to_string).unwrap_or_else(|| a.to_string()));
                i += 2;
                continue;
            }
        }
        out.push(polar_mark(lex, t).map(str::to_string).unwrap_or_else(|| t.to_string()));
        i += 1;
    }
    out
}

fn semantic_form(logical: &[String], lex: &Lexicons) -> Vec<String> {
    logical.iter().map(|t| lex.synonym_rep(t).to_string()).collect()
}

fn opposite(x: &str, y: &str, lex: &Lexicons) -> bool {
    matches!((x, y), (TRUE_MARK, FALSE_MARK) | (FALSE_MARK, TRUE_MARK)) || lex.are_antonyms(x, y)
}

/// Same words except one opposed pair, or one side is the other negated.
fn contradicts(a: &[String], b: &[String], lex: &Lexicons) -> bool {
    if a.len() == b.len() {
        let diffs: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        return diffs.len() == 1 && opposite(&a[diffs[0]], &b[diffs[0]], lex);
    }
    let (short, long) = if a.len() < b.len() { (a, b) } else { (b, a) };
    long.len() == short.len() + 1
        && (0..long.len()).any(|i| {
            long[i] == "not" && long[..i] == short[..i] && long[i + 1..] == short[i..]
        })
}

fn is_subsequence(short: &str, long: &str) -> bool {
    let mut it = long.chars();
    short.chars().all(|c| it.any(|l| l == c))
}

fn abbreviates(x: &str, y: &str) -> bool {
    x == y
        || (x.len() < y.len()
            && x.chars().next() == y.chars().next()
            && x.chars().all(|c| c.is_alphabetic())
            && is_subsequence(x, y))
}

fn abbreviation(fa: &str, fb: &str, ta: &[String], tb: &[String]) -> Option<f64> {
    let (la, lb) = (fa.chars().count(), fb.chars().count());
    let (s, l, ts, tl, ls, ll) = match la.cmp(&lb) {
        std::cmp::Ordering::Less => (fa, fb, ta, tb, la, lb),
        std::cmp::Ordering::Greater => (fb, fa, tb, ta, lb, la),
        std::cmp::Ordering::Equal => return None,
    };
    if ls < 2 {
        return None;
    }
    let initials: String = tl.iter().filter_map(|t| t.chars().next()).collect();
    let fires = l.starts_with(s)
        || (tl.len() >= 2 && initials == s)
        || (!ts.is_empty() && ts.len() == tl.len() && ts.iter().zip(tl).all(|(x, y)| abbreviates(x, y)));
    fires.then(|| 0.8 + 0.2 * ls as f64 / ll as f64)
}

/// Category and score of the first rule that fires, in priority order.
pub fn score_keys(a: &str, b: &str, lex: &Lexicons) -> Option<(Category, f64)> {
    if a == b {
        return Some((Category::Exact, 1.0));
    }
    let (fa, fb) = (fold(a), fold(b));
    if fa.is_empty() || fb.is_empty() {
        return None;
    }
    if fa == fb {
        return Some((Category::Format, 1.0));
    }
    let (ta, tb) = (tokens(a), tokens(b));
    let (la, lb) = (logical_form(&ta, lex), logical_form(&tb, lex));
    if contradicts(&la, &lb, lex) {
        return None;
    }
    let d = levenshtein(&fa, &fb);
    let m = fa.chars().count().max(fb.chars().count());
    if d <= 2 && m >= 6 {
        return Some((Category::Spelling, (m - d) as f64 / m as f64));
    }
    if let Some(s) = abbreviation(&fa, &fb, &ta, &tb) {
        return Some((Category::Abbreviation, s));
    }
    if la == lb {
        return Some((Category::Logical, 1.0));
    }
    if semantic_form(&la, lex) == semantic_form(&lb, lex) {
        return Some((Category::Semantic, 1.0));
    }
    None
}

pub const SUBSTATE_SCORE: f64 = 0.7;

/// Label scoring: key rules, boolean equivalence, then state ⊃ substate implication.
pub fn label_score(a: &str, b: &str, lex: &Lexicons) -> Option<(Category, f64)> {
    if let Some(s) = score_keys(a, b, lex) {
        return Some(s);
    }
    for (x, y) in [(a, b), (b, a)] {
        let implied = lex.parents(&fold(y)).any(|parent| {
            score_keys(x, parent, lex).is_some_and(|(c, s)| s >= 1.0 && c != Category::Spelling)
        });
        if implied {
            return Some((Category::Pseudocode, SUBSTATE_SCORE));
        }
    }
    None
}
