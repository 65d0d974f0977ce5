//! Word-vector tables and the cosine similarity used by every MCS computation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// Token to dense vector map. All vectors share `dim` and are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    /// Inserts `word` unless already present. Returns whether it was inserted.
    pub fn insert(&mut self, word: &str, vector: &[f64]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "vector for `{word}` has {} components, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig(format!("vector for `{word}` is not finite")));
        }
        if self.index.contains_key(word) {
            return Ok(false);
        }
        self.index.insert(word.to_string(), self.words.len());
        self.words.push(word.to_string());
        self.data.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Words in insertion order.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.words.len(), self.dim)?;
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for x in &self.data[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_text(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Parses the word-vector text format: a `<count> <dim>` header followed by
/// one `<word> <f1> ... <fdim>` line per entry. Duplicate words keep the
/// first occurrence.
pub fn parse_embeddings<R: BufRead>(reader: R, origin: &Path) -> Result<EmbeddingTable> {
    let mut lines = reader.lines().enumerate();
    let (count, dim) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(Error::parse(origin, 1, "missing `<count> <dim>` header"));
        };
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parsed = (|| {
            let count = parts.next()?.parse::<usize>().ok()?;
            let dim = parts.next()?.parse::<usize>().ok()?;
            parts.next().is_none().then_some((count, dim))
        })();
        match parsed {
            Some((c, d)) if d > 0 => break (c, d),
            _ => return Err(Error::parse(origin, i + 1, "header must be `<count> <dim>`")),
        }
    };

    let mut table = EmbeddingTable::new(dim)?;
    let mut seen_lines = 0usize;
    let mut vector = Vec::with_capacity(dim);
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        seen_lines += 1;
        let mut parts = line.split(' ').filter(|p| !p.is_empty());
        let word = parts
            .next()
            .ok_or_else(|| Error::parse(origin, lineno, "missing word"))?;
        vector.clear();
        for p in parts {
            let x: f64 = p
                .parse()
                .map_err(|_| Error::parse(origin, lineno, format!("bad float `{p}`")))?;
            if !x.is_finite() {
                return Err(Error::parse(origin, lineno, "non-finite component"));
            }
            vector.push(x);
        }
        if vector.len() != dim {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected {dim} components, found {}", vector.len()),
            ));
        }
        table.insert(word, &vector)?;
    }
    if seen_lines != count {
        return Err(Error::parse(
            origin,
            1,
            format!("header declares {count} entries but {seen_lines} were found"),
        ));
    }
    Ok(table)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file), path)
}

/// Cosine similarity clamped to [-1, 1]. A zero-norm operand yields 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Centroid embedding of a (possibly multi-token) tag.
#[derive(Debug, Clone, PartialEq)]
pub struct TagEmbedding {
    pub tag: String,
    pub vector: Vec<f64>,
    pub covered_tokens: usize,
}

/// Averages the vectors of the tag's in-vocabulary tokens.
pub fn embed_tag(tag: &str, table: &EmbeddingTable) -> Result<TagEmbedding> {
    let mut sum = vec![0.0; table.dim()];
    let mut covered = 0usize;
    for token in &tokenize(tag) {
        if let Some(v) = table.get(token) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            covered += 1;
        }
    }
    if covered == 0 {
        return Err(Error::UncoverableTag(tag.to_string()));
    }
    let n = covered as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(TagEmbedding {
        tag: tag.to_string(),
        vector: sum,
        covered_tokens: covered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<EmbeddingTable> {
        parse_embeddings(text.as_bytes(), Path::new("vec.txt"))
    }

    #[test]
    fn loads_header_and_rows() {
        let t = parse("3 2\na 1 0\nb 0 1\nc 0.5 -0.5\n").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 3);
        assert_eq!(t.get("c"), Some(&[0.5, -0.5][..]));
    }

    #[test]
    fn wrong_float_count_names_line() {
        let err = parse("2 2\na 1 0\nb 0 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn duplicate_word_keeps_first() {
        let t = parse("2 2\na 1 0\na 0 1\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("a"), Some(&[1.0, 0.0][..]));
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]), -1.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn tag_centroid() {
        let t = parse("4 2\nct 0.2 0.4\nhead 1 0\nof 0 1\npancreas 1 1\n").unwrap();
        let e = embed_tag("CT", &t).unwrap();
        assert_eq!(e.vector, vec![0.2, 0.4]);
        assert_eq!(e.covered_tokens, 1);

        let e = embed_tag("Head of pancreas", &t).unwrap();
        assert_eq!(e.vector, vec![(1.0 + 0.0 + 1.0) / 3.0, (0.0 + 1.0 + 1.0) / 3.0]);
        assert_eq!(e.covered_tokens, 3);

        let e = embed_tag("head unknownword", &t).unwrap();
        assert_eq!(e.covered_tokens, 1);

        match embed_tag("zzz qqq", &t) {
            Err(Error::UncoverableTag(tag)) => assert_eq!(tag, "zzz qqq"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn arb_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, dim)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            (a, b) in (1usize..12).prop_flat_map(|d| (arb_vec(d), arb_vec(d))),
            c in 0.01f64..100.0,
        ) {
            prop_assert_eq!(cosine(&a, &b), cosine(&b, &a));
            let s = cosine(&a, &b);
            prop_assert!((-1.0..=1.0).contains(&s));
            if a.iter().any(|x| *x != 0.0) {
                let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
                prop_assert!((cosine(&a, &scaled) - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn centroid_ignores_token_order(rows in proptest::collection::vec(arb_vec(3), 1..5)) {
            let mut table = EmbeddingTable::new(3).unwrap();
            let words: Vec<String> = (0..rows.len()).map(|i| format!("w{i}")).collect();
            for (w, v) in words.iter().zip(&rows) {
                table.insert(w, v).unwrap();
            }
            let forward = embed_tag(&words.join(" "), &table).unwrap();
            let mut rev = words.clone();
            rev.reverse();
            let backward = embed_tag(&rev.join(" "), &table).unwrap();
            for (x, y) in forward.vector.iter().zip(&backward.vector) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
