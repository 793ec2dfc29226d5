//! Character alignments and site-pattern compression.

use std::collections::HashMap;

use crate::error::Error;

const DNA: &str = "ACGT";
const ALWAYS_MISSING: &str = "-?.";
const DNA_AMBIGUOUS: &str = "NRYSWKMBDHV";

/// Character alphabet; gap and ambiguity codes are read as fully missing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<u8>,
    missing: Vec<u8>,
}

impl Alphabet {
    pub fn dna() -> Self {
        let mut missing: Vec<u8> = ALWAYS_MISSING.bytes().collect();
        missing.extend(DNA_AMBIGUOUS.bytes());
        Self { symbols: DNA.bytes().collect(), missing }
    }

    /// Arbitrary symbol set; only `-`, `?` and `.` are treated as missing.
    pub fn custom(symbols: &str) -> Result<Self, Error> {
        let mut seen: Vec<u8> = symbols.bytes().map(|b| b.to_ascii_uppercase()).collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() < 2 || seen.len() != symbols.len() {
            return Err(Error::InvalidParameter(format!("alphabet {symbols:?} needs at least two distinct symbols")));
        }
        let symbols: Vec<u8> = symbols.bytes().map(|b| b.to_ascii_uppercase()).collect();
        if symbols.iter().any(|b| ALWAYS_MISSING.as_bytes().contains(b)) {
            return Err(Error::InvalidParameter("alphabet may not contain '-', '?' or '.'".into()));
        }
        Ok(Self { symbols, missing: ALWAYS_MISSING.bytes().collect() })
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    /// State index, `None` for missing, `Err` for characters outside the alphabet.
    pub fn encode(&self, c: u8) -> Result<Option<u8>, u8> {
        let u = c.to_ascii_uppercase();
        let u = if u == b'U' && self.symbols == DNA.as_bytes() { b'T' } else { u };
        if let Some(i) = self.symbols.iter().position(|&s| s == u) {
            Ok(Some(i as u8))
        } else if self.missing.contains(&u) {
            Ok(None)
        } else {
            Err(c)
        }
    }
}

/// `N` taxa by `S` sites of encoded characters (`None` = missing).
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    taxa: Vec<String>,
    rows: Vec<Vec<Option<u8>>>,
    alphabet: Alphabet,
}

impl Alignment {
    pub fn new(taxa: Vec<String>, sequences: Vec<String>, alphabet: Alphabet) -> Result<Self, Error> {
        if taxa.len() != sequences.len() {
            return Err(Error::Alignment("taxon and sequence counts differ".into()));
        }
        if taxa.len() < 2 {
            return Err(Error::Alignment(format!("need at least 2 taxa, got {}", taxa.len())));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &taxa {
            if !seen.insert(t) {
                return Err(Error::Alignment(format!("duplicate taxon name {t}")));
            }
        }
        let expected = sequences[0].len();
        if expected == 0 {
            return Err(Error::Alignment("empty sequences".into()));
        }
        let mut rows = Vec::with_capacity(taxa.len());
        for (name, seq) in taxa.iter().zip(&sequences) {
            if seq.len() != expected {
                return Err(Error::Ragged { taxon: name.clone(), got: seq.len(), expected });
            }
            let mut bad = Vec::new();
            let row: Vec<Option<u8>> = seq
                .bytes()
                .map(|c| alphabet.encode(c).unwrap_or_else(|b| {
                    if !bad.contains(&b) {
                        bad.push(b);
                    }
                    None
                }))
                .collect();
            if !bad.is_empty() {
                bad.sort_unstable();
                let chars = bad.iter().map(|&b| (b as char).to_string()).collect::<Vec<_>>().join(", ");
                return Err(Error::UnknownCharacters { taxon: name.clone(), chars });
            }
            rows.push(row);
        }
        Ok(Self { taxa, rows, alphabet })
    }

    pub fn dna(pairs: &[(&str, &str)]) -> Result<Self, Error> {
        Self::new(
            pairs.iter().map(|p| p.0.to_string()).collect(),
            pairs.iter().map(|p| p.1.to_string()).collect(),
            Alphabet::dna(),
        )
    }

    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }

    pub fn n_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn n_sites(&self) -> usize {
        self.rows[0].len()
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn row(&self, i: usize) -> &[Option<u8>] {
        &self.rows[i]
    }

    /// Alignment restricted to and reordered by `order`.
    pub fn select(&self, order: &[usize]) -> Self {
        Self {
            taxa: order.iter().map(|&i| self.taxa[i].clone()).collect(),
            rows: order.iter().map(|&i| self.rows[i].clone()).collect(),
            alphabet: self.alphabet.clone(),
        }
    }

    /// Renders row `i` back to characters (`-` for missing).
    pub fn row_string(&self, i: usize) -> String {
        self.rows[i]
            .iter()
            .map(|c| c.map_or('-', |k| self.alphabet.symbols[k as usize] as char))
            .collect()
    }

    pub fn patterns(&self) -> SitePatterns {
        SitePatterns::from_alignment(self)
    }
}

/// Distinct alignment columns with multiplicities, plus one leaf partial
/// vector per taxon over the patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct SitePatterns {
    pub n_states: usize,
    /// Multiplicity of each pattern.
    pub weights: Vec<f64>,
    /// `leaves[taxon][pattern * n_states + state]`, 1 where compatible.
    pub leaves: Vec<Vec<f64>>,
    /// Pattern index of every original site.
    pub site_pattern: Vec<usize>,
}

impl SitePatterns {
    pub fn from_alignment(aln: &Alignment) -> Self {
        let a = aln.alphabet.size();
        let mut index: HashMap<Vec<Option<u8>>, usize> = HashMap::new();
        let mut columns: Vec<Vec<Option<u8>>> = Vec::new();
        let mut weights = Vec::new();
        let mut site_pattern = Vec::with_capacity(aln.n_sites());
        for s in 0..aln.n_sites() {
            let col: Vec<Option<u8>> = aln.rows.iter().map(|r| r[s]).collect();
            match index.get(&col) {
                Some(&k) => {
                    weights[k] += 1.0;
                    site_pattern.push(k);
                }
                None => {
                    site_pattern.push(columns.len());
                    index.insert(col.clone(), columns.len());
                    columns.push(col);
                    weights.push(1.0);
                }
            }
        }
        let leaves = (0..aln.n_taxa())
            .map(|t| {
                let mut v = vec![0.0; columns.len() * a];
                for (p, col) in columns.iter().enumerate() {
                    match col[t] {
                        Some(k) => v[p * a + k as usize] = 1.0,
                        None => v[p * a..(p + 1) * a].fill(1.0),
                    }
                }
                v
            })
            .collect();
        Self { n_states: a, weights, leaves, site_pattern }
    }

    pub fn n_patterns(&self) -> usize {
        self.weights.len()
    }
}

/// How pairwise mismatch counts are reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HammingMode {
    /// Mismatches over sites where both characters are present.
    Proportion,
    /// Raw mismatch count.
    Count,
}

/// Pairwise Hamming distances; sites missing in either sequence are skipped.
///
/// A pair with no comparable sites gets the saturation value `(A-1)/A`
/// (proportion mode) or 0 (count mode).
pub fn hamming_matrix(aln: &Alignment, mode: HammingMode) -> Vec<Vec<f64>> {
    let n = aln.n_taxa();
    let sat = (aln.alphabet.size() - 1) as f64 / aln.alphabet.size() as f64;
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (mut diff, mut total) = (0usize, 0usize);
            for (a, b) in aln.rows[i].iter().zip(&aln.rows[j]) {
                if let (Some(a), Some(b)) = (a, b) {
                    total += 1;
                    diff += (a != b) as usize;
                }
            }
            let d = match mode {
                HammingMode::Count => diff as f64,
                HammingMode::Proportion if total == 0 => sat,
                HammingMode::Proportion => diff as f64 / total as f64,
            };
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamming_examples() {
        let aln = Alignment::dna(&[("a", "ACGT"), ("b", "ACGA"), ("c", "ACGT"), ("d", "AAAA"), ("e", "CCCC")]).unwrap();
        let h = hamming_matrix(&aln, HammingMode::Proportion);
        assert_eq!(h[0][2], 0.0);
        assert_eq!(h[0][1], 0.25);
        assert_eq!(h[3][4], 1.0);
        assert_eq!(h[1][0], h[0][1]);
        assert_eq!(hamming_matrix(&aln, HammingMode::Count)[3][4], 4.0);
    }

    #[test]
    fn missing_sites_are_skipped() {
        let aln = Alignment::dna(&[("a", "AC-T"), ("b", "ACGA"), ("c", "????")]).unwrap();
        let h = hamming_matrix(&aln, HammingMode::Proportion);
        assert!((h[0][1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(h[0][2], 0.75);
    }

    #[test]
    fn ragged_and_unknown_are_rejected() {
        match Alignment::dna(&[("a", "ACGT"), ("bad", "ACG")]) {
            Err(Error::Ragged { taxon, .. }) => assert_eq!(taxon, "bad"),
            other => panic!("{other:?}"),
        }
        match Alignment::dna(&[("a", "ACGT"), ("b", "AZGJ")]) {
            Err(Error::UnknownCharacters { taxon, chars }) => {
                assert_eq!(taxon, "b");
                assert_eq!(chars, "J, Z");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn case_and_missing_codes() {
        let aln = Alignment::dna(&[("a", "acgtu"), ("b", "N-?.R")]).unwrap();
        assert_eq!(aln.row(0), &[Some(0), Some(1), Some(2), Some(3), Some(3)]);
        assert!(aln.row(1).iter().all(Option::is_none));
    }

    #[test]
    fn patterns_compress_columns() {
        let aln = Alignment::dna(&[("a", "AACAT"), ("b", "GGCGN")]).unwrap();
        let p = aln.patterns();
        assert_eq!(p.weights, vec![3.0, 1.0, 1.0]);
        assert_eq!(p.site_pattern, vec![0, 0, 1, 0, 2]);
        assert_eq!(&p.leaves[0][0..4], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&p.leaves[1][8..12], &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn custom_alphabet() {
        let ab = Alphabet::custom("01").unwrap();
        let aln = Alignment::new(vec!["x".into(), "y".into()], vec!["0101".into(), "1?-0".into()], ab).unwrap();
        assert_eq!(aln.patterns().n_states, 2);
        assert!(Alphabet::custom("0").is_err());
        assert!(Alphabet::custom("00").is_err());
    }
}
