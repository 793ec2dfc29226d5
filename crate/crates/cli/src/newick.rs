//! Newick trees with branch lengths.
//!
//! Output is canonical: children are ordered by the smallest taxon name
//! below them and lengths carry ten significant digits, so equal trees print
//! identically.

use hyperphylo::evo::Tree;
use hyperphylo::smc::PartialState;

use crate::error::CliError;

/// Shortest decimal form with ten significant digits.
pub fn format_length(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (9 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
    // Rounding can carry into a new digit (9.9999999999 -> 10.000000000).
    match s.parse::<f64>() {
        Ok(_) => s,
        Err(_) => format!("{v:e}"),
    }
}

fn quote(name: &str) -> String {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace() || "()[]':;,".contains(c)) {
        format!("'{}'", name.replace('\'', "''"))
    } else {
        name.to_string()
    }
}

fn min_leaf(t: &Tree) -> &str {
    t.leaf_names().into_iter().min().unwrap_or("")
}

fn emit(t: &Tree, out: &mut String) {
    if t.is_leaf() {
        out.push_str(&quote(t.name.as_deref().unwrap_or("")));
        return;
    }
    let mut kids: Vec<&(Tree, f64)> = t.children.iter().collect();
    kids.sort_by(|a, b| min_leaf(&a.0).cmp(min_leaf(&b.0)));
    out.push('(');
    for (i, (c, b)) in kids.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        emit(c, out);
        out.push(':');
        out.push_str(&format_length(*b));
    }
    out.push(')');
}

/// One line, terminated by `;` and a newline.
pub fn write_newick(tree: &Tree) -> String {
    let mut s = String::new();
    emit(tree, &mut s);
    s.push_str(";\n");
    s
}

/// Fails unless the state has merged into a single root.
pub fn state_newick(state: &PartialState, taxa: &[String]) -> Result<String, CliError> {
    Ok(write_newick(&state.tree(taxa)?))
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> CliError {
        CliError::Parse(format!("newick, byte {}: {msg}", self.i))
    }

    fn skip(&mut self) {
        loop {
            while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
                self.i += 1;
            }
            if self.peek() == Some(b'[') {
                while self.i < self.s.len() && self.s[self.i] != b']' {
                    self.i += 1;
                }
                self.i += 1;
            } else {
                return;
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.i).copied()
    }

    fn label(&mut self) -> Result<String, CliError> {
        self.skip();
        if self.peek() == Some(b'\'') {
            self.i += 1;
            let mut out = Vec::new();
            loop {
                match self.peek() {
                    None => return Err(self.err("unterminated quoted label")),
                    Some(b'\'') if self.s.get(self.i + 1) == Some(&b'\'') => {
                        out.push(b'\'');
                        self.i += 2;
                    }
                    Some(b'\'') => {
                        self.i += 1;
                        break;
                    }
                    Some(c) => {
                        out.push(c);
                        self.i += 1;
                    }
                }
            }
            return String::from_utf8(out).map_err(|_| self.err("label is not UTF-8"));
        }
        let start = self.i;
        while let Some(c) = self.peek() {
            if b"():;,[".contains(&c) || c.is_ascii_whitespace() {
                break;
            }
            self.i += 1;
        }
        Ok(String::from_utf8_lossy(&self.s[start..self.i]).into_owned())
    }

    fn length(&mut self) -> Result<Option<f64>, CliError> {
        self.skip();
        if self.peek() != Some(b':') {
            return Ok(None);
        }
        self.i += 1;
        self.skip();
        let start = self.i;
        while let Some(c) = self.peek() {
            if !(c.is_ascii_alphanumeric() || b"+-.".contains(&c)) {
                break;
            }
            self.i += 1;
        }
        let text = std::str::from_utf8(&self.s[start..self.i]).unwrap_or("");
        let v: f64 = text.parse().map_err(|_| self.err(&format!("bad branch length {text:?}")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(self.err(&format!("branch length {v} must be finite and non-negative")));
        }
        Ok(Some(v))
    }

    fn subtree(&mut self) -> Result<Tree, CliError> {
        self.skip();
        if self.peek() == Some(b'(') {
            self.i += 1;
            let mut children = Vec::new();
            loop {
                let child = self.subtree()?;
                let len = self.length()?.ok_or_else(|| self.err("missing branch length"))?;
                children.push((child, len));
                self.skip();
                match self.peek() {
                    Some(b',') => self.i += 1,
                    Some(b')') => {
                        self.i += 1;
                        break;
                    }
                    _ => return Err(self.err("expected ',' or ')'")),
                }
            }
            // Internal labels (support values) are read and dropped.
            self.label()?;
            Ok(Tree::node(children))
        } else {
            let name = self.label()?;
            if name.is_empty() {
                return Err(self.err("empty leaf label"));
            }
            Ok(Tree::leaf(&name))
        }
    }
}

pub fn parse_newick(text: &str) -> Result<Tree, CliError> {
    let mut p = Parser { s: text.as_bytes(), i: 0 };
    let tree = p.subtree()?;
    p.length()?;
    p.skip();
    if p.peek() != Some(b';') {
        return Err(p.err("expected ';'"));
    }
    p.i += 1;
    p.skip();
    if p.i < p.s.len() {
        return Err(p.err("trailing text after ';'"));
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hyperphylo::smc::tree_topology_key;
    use proptest::prelude::*;

    #[test]
    fn cherry_round_trips() {
        let t = parse_newick("(A:0.1,B:0.2);").unwrap();
        assert_eq!(write_newick(&t), "(A:0.1,B:0.2);\n");
        assert_eq!(t, Tree::node(vec![(Tree::leaf("A"), 0.1), (Tree::leaf("B"), 0.2)]));
    }

    #[test]
    fn children_are_ordered_canonically() {
        let a = parse_newick("((d:1,c:2):0.5,(b:3,a:4):0.25);").unwrap();
        assert_eq!(write_newick(&a), "((a:4,b:3):0.25,(c:2,d:1):0.5);\n");
    }

    #[test]
    fn ten_significant_digits() {
        assert_eq!(format_length(0.123456789012345), "0.123456789");
        assert_eq!(format_length(1234.56789012345), "1234.56789");
        assert_eq!(format_length(1e-9), "0.000000001");
        assert_eq!(format_length(2.0), "2");
        assert_eq!(format_length(0.0), "0");
    }

    #[test]
    fn quoted_labels_comments_and_support_values() {
        let t = parse_newick("[tree] ('Homo sapiens':0.1,('it''s':0.2,c:0.3)95:0.4)root;").unwrap();
        assert_eq!(t.leaf_names(), ["Homo sapiens", "it's", "c"]);
        let again = parse_newick(&write_newick(&t)).unwrap();
        assert_eq!(write_newick(&again), write_newick(&t));
    }

    #[test]
    fn malformed_input_fails() {
        for bad in ["(A:0.1,B:0.2)", "(A,B);", "(A:0.1,B:x);", "(A:0.1,:0.2);", "(A:0.1,B:0.2); extra", "(A:-1,B:1);"] {
            assert!(parse_newick(bad).is_err(), "{bad}");
        }
    }

    fn arb_tree(names: Vec<String>) -> BoxedStrategy<Tree> {
        if names.len() == 1 {
            return Just(Tree::leaf(&names[0])).boxed();
        }
        (1..names.len(), 1e-6..3.0f64, 1e-6..3.0f64)
            .prop_flat_map(move |(cut, l, r)| {
                let (a, b) = names.split_at(cut);
                (arb_tree(a.to_vec()), arb_tree(b.to_vec())).prop_map(move |(x, y)| Tree::node(vec![(x, l), (y, r)]))
            })
            .boxed()
    }

    proptest! {
        #[test]
        fn emit_parse_emit_is_a_fixpoint(t in (2usize..9).prop_flat_map(|n| arb_tree((0..n).map(|i| format!("t{i}")).collect()))) {
            let s = write_newick(&t);
            let back = parse_newick(&s).unwrap();
            prop_assert_eq!(write_newick(&back), s);
            let taxa: Vec<String> = {
                let mut v: Vec<String> = t.leaf_names().iter().map(|s| s.to_string()).collect();
                v.sort();
                v
            };
            prop_assert_eq!(tree_topology_key(&back, &taxa).unwrap(), tree_topology_key(&t, &taxa).unwrap());
            let (mut x, mut y) = (t.branch_lengths(), back.branch_lengths());
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            }
        }
    }
}
