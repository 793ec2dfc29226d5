//! FASTA and NEXUS alignment readers.
//!
//! The NEXUS reader understands one DATA or CHARACTERS block: `dimensions`,
//! the `missing`, `gap` and `matchchar` symbols of `format`, and a matrix
//! that may be interleaved. Everything else in the file is skipped.

use std::path::Path;

use serde::{Deserialize, Serialize};

use hyperphylo::alignment::{Alignment, Alphabet};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Fasta,
    Nexus,
}

impl Format {
    /// Guesses from the extension; anything unrecognized is FASTA.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
            Some("nex" | "nexus" | "nxs") => Format::Nexus,
            _ => Format::Fasta,
        }
    }
}

pub fn read_alignment(path: &Path, format: Format, alphabet: &Alphabet) -> Result<Alignment, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    match format {
        Format::Fasta => parse_fasta(&text, alphabet),
        Format::Nexus => parse_nexus(&text, alphabet),
    }
}

pub fn parse_fasta(text: &str, alphabet: &Alphabet) -> Result<Alignment, CliError> {
    let mut taxa: Vec<String> = Vec::new();
    let mut seqs: Vec<String> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let name = header.split_whitespace().next().unwrap_or("");
            if name.is_empty() {
                return Err(CliError::Parse(format!("line {}: empty FASTA header", n + 1)));
            }
            taxa.push(name.to_string());
            seqs.push(String::new());
        } else {
            let seq = seqs
                .last_mut()
                .ok_or_else(|| CliError::Parse(format!("line {}: sequence before the first header", n + 1)))?;
            seq.extend(line.chars().filter(|c| !c.is_whitespace()));
        }
    }
    if taxa.is_empty() {
        return Err(CliError::Parse("empty alignment".into()));
    }
    Ok(Alignment::new(taxa, seqs, alphabet.clone())?)
}

/// Drops `[...]` comments.
fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    for c in text.chars() {
        match c {
            '[' => depth += 1,
            ']' if depth > 0 => depth -= 1,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

/// Splits `key=value` pairs out of a command body.
fn options(body: &str) -> Vec<(String, String)> {
    let spaced = body.replace('=', " = ");
    let toks: Vec<&str> = spaced.split_whitespace().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        if i + 2 < toks.len() && toks[i + 1] == "=" {
            out.push((toks[i].to_ascii_lowercase(), toks[i + 2].to_string()));
            i += 3;
        } else {
            i += 1;
        }
    }
    out
}

/// Reads one matrix row: an optionally quoted name followed by sequence chunks.
fn split_row(line: &str) -> Result<(String, String), CliError> {
    let line = line.trim();
    let (name, rest) = if let Some(q) = line.strip_prefix('\'') {
        let mut name = String::new();
        let mut chars = q.char_indices().peekable();
        let mut end = None;
        while let Some((i, c)) = chars.next() {
            if c == '\'' {
                if chars.peek().map(|x| x.1) == Some('\'') {
                    name.push('\'');
                    chars.next();
                } else {
                    end = Some(i + 1);
                    break;
                }
            } else {
                name.push(c);
            }
        }
        let end = end.ok_or_else(|| CliError::Parse(format!("unterminated quoted taxon name in {line:?}")))?;
        (name, &q[end..])
    } else {
        let mut parts = line.splitn(2, char::is_whitespace);
        (parts.next().unwrap_or("").to_string(), parts.next().unwrap_or(""))
    };
    Ok((name, rest.chars().filter(|c| !c.is_whitespace()).collect()))
}

pub fn parse_nexus(text: &str, alphabet: &Alphabet) -> Result<Alignment, CliError> {
    let text = strip_comments(text);
    if !text.trim_start().to_ascii_lowercase().starts_with("#nexus") {
        return Err(CliError::Parse("missing #NEXUS header".into()));
    }
    let lower = text.to_ascii_lowercase();
    let start = ["begin data;", "begin characters;"]
        .iter()
        .filter_map(|b| lower.find(b).map(|i| i + b.len()))
        .min()
        .ok_or_else(|| CliError::Parse("no DATA or CHARACTERS block".into()))?;
    let end = lower[start..].find("end;").map(|i| start + i).unwrap_or(text.len());
    let block = &text[start..end];

    let (mut ntax, mut nchar) = (None, None);
    let (mut missing, mut gap, mut matchchar) = ('?', '-', None);
    let mut matrix = None;
    for command in block.split(';') {
        let trimmed = command.trim_start();
        let head = trimmed.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
        let body = &trimmed[head.len().min(trimmed.len())..];
        match head.as_str() {
            "dimensions" => {
                for (k, v) in options(body) {
                    let n = v.parse::<usize>().map_err(|_| CliError::Parse(format!("bad {k}={v}")))?;
                    match k.as_str() {
                        "ntax" => ntax = Some(n),
                        "nchar" => nchar = Some(n),
                        _ => {}
                    }
                }
            }
            "format" => {
                for (k, v) in options(body) {
                    let c = v.chars().next();
                    match (k.as_str(), c) {
                        ("missing", Some(c)) => missing = c,
                        ("gap", Some(c)) => gap = c,
                        ("matchchar", Some(c)) => matchchar = Some(c),
                        _ => {}
                    }
                }
            }
            "matrix" => matrix = Some(body.to_string()),
            _ => {}
        }
    }
    let matrix = matrix.ok_or_else(|| CliError::Parse("DATA block has no MATRIX".into()))?;

    // Interleaved blocks repeat each name; chunks are appended in order.
    let mut taxa: Vec<String> = Vec::new();
    let mut seqs: Vec<String> = Vec::new();
    for line in matrix.lines().filter(|l| !l.trim().is_empty()) {
        let (name, chunk) = split_row(line)?;
        match taxa.iter().position(|t| *t == name) {
            Some(i) => seqs[i].push_str(&chunk),
            None => {
                taxa.push(name);
                seqs.push(chunk);
            }
        }
    }
    if taxa.is_empty() {
        return Err(CliError::Parse("empty alignment".into()));
    }
    let first: Vec<char> = seqs[0].chars().collect();
    for (i, seq) in seqs.iter_mut().enumerate() {
        *seq = seq
            .chars()
            .enumerate()
            .map(|(j, c)| match c {
                c if Some(c) == matchchar && i > 0 => first.get(j).copied().unwrap_or(c),
                c if c == missing || c == gap => '?',
                c => c,
            })
            .collect();
    }
    if let Some(n) = ntax {
        if n != taxa.len() {
            return Err(CliError::Parse(format!("ntax={n} but the matrix has {} rows", taxa.len())));
        }
    }
    if let Some(n) = nchar {
        if let Some((t, s)) = taxa.iter().zip(&seqs).find(|(_, s)| s.chars().count() != n) {
            return Err(CliError::Parse(format!("nchar={n} but taxon {t} has {} sites", s.chars().count())));
        }
    }
    Ok(Alignment::new(taxa, seqs, alphabet.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FASTA: &str = ">human some description\nACGTAC\nGT\n>chimp\nACGTTCGA\n>gorilla\nACcT-CG?\n";

    const NEXUS: &str = "#NEXUS
[written by hand]
BEGIN TAXA;
  DIMENSIONS NTAX=3;
END;
BEGIN DATA;
  DIMENSIONS NTAX=3 NCHAR=8;
  FORMAT DATATYPE=DNA MISSING=? GAP=- INTERLEAVE=YES;
  MATRIX
    human   ACGT
    chimp   ACGT
    gorilla ACcT

    human   ACGT
    chimp   TCGA
    gorilla -CG?
  ;
END;
";

    #[test]
    fn fasta_reads_multiline_records() {
        let aln = parse_fasta(FASTA, &Alphabet::dna()).unwrap();
        assert_eq!(aln.taxa(), ["human", "chimp", "gorilla"]);
        assert_eq!(aln.n_sites(), 8);
        assert_eq!(aln.row(2)[4], None);
        assert_eq!(aln.row(2)[2], aln.row(0)[1]);
    }

    #[test]
    fn interleaved_nexus_equals_fasta() {
        let a = parse_fasta(FASTA, &Alphabet::dna()).unwrap();
        let b = parse_nexus(NEXUS, &Alphabet::dna()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nexus_quoted_names_matchchar_and_symbols() {
        let text = "#nexus\nbegin characters;\ndimensions nchar=4;\nformat missing=N gap=~ matchchar=.;\nmatrix\n'Homo sapiens' ACGT\n'Pan''s' ..~N\n;\nend;\n";
        let aln = parse_nexus(text, &Alphabet::dna()).unwrap();
        assert_eq!(aln.taxa(), ["Homo sapiens", "Pan's"]);
        assert_eq!(aln.row_string(1), "AC--");
    }

    #[test]
    fn ragged_input_names_the_taxon() {
        let err = parse_fasta(">a\nACGT\n>bb\nACG\n", &Alphabet::dna()).unwrap_err();
        assert!(err.to_string().contains("bb"), "{err}");
        let err = parse_nexus("#NEXUS\nbegin data; dimensions ntax=2 nchar=4; matrix\na ACGT\nbb ACG\n;\nend;", &Alphabet::dna()).unwrap_err();
        assert!(err.to_string().contains("bb"), "{err}");
    }

    #[test]
    fn empty_and_malformed_inputs_fail() {
        assert!(parse_fasta("", &Alphabet::dna()).is_err());
        assert!(parse_fasta("ACGT\n", &Alphabet::dna()).is_err());
        assert!(parse_nexus("begin data; matrix a A; end;", &Alphabet::dna()).is_err());
        assert!(parse_nexus("#NEXUS\nbegin data; dimensions ntax=3; matrix\na AC\nb AC\n;\nend;", &Alphabet::dna()).is_err());
    }

    #[test]
    fn unknown_characters_are_listed() {
        let err = parse_fasta(">a\nACXZ\n>b\nACGT\n", &Alphabet::dna()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('X') && msg.contains('Z') && msg.contains(" a"), "{msg}");
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(Format::from_path(Path::new("x/primates.NEX")), Format::Nexus);
        assert_eq!(Format::from_path(Path::new("x.fa")), Format::Fasta);
    }
}
