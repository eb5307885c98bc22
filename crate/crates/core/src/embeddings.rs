//! Pretrained word vectors and label vectors.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Word to vector lookup, keys lowercased.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` pairs. The first occurrence of a
    /// word wins.
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut table = EmbeddingTable {
            dim: 0,
            entries: HashMap::new(),
        };
        for (i, (word, vector)) in entries.into_iter().enumerate() {
            table.insert(i + 1, word.as_ref(), vector)?;
        }
        if table.dim == 0 {
            return Err(Error::Empty("embedding table has no entries"));
        }
        Ok(table)
    }

    fn insert(&mut self, line: usize, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.is_empty() {
            return Err(Error::EmbeddingFormat {
                line,
                message: "vector has no components".into(),
            });
        }
        if self.dim == 0 {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(Error::EmbeddingFormat {
                line,
                message: format!("expected {} components, found {}", self.dim, vector.len()),
            });
        }
        let key = word.to_lowercase();
        match self.entries.entry(key) {
            Entry::Occupied(e) => {
                warn!(
                    "duplicate word '{}' on line {line}; keeping the first vector",
                    e.key()
                )
            }
            Entry::Vacant(e) => {
                e.insert(vector);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }
}

/// Reads the plain-text vector format: `word v1 v2 ... vD` per line.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable {
        dim: 0,
        entries: HashMap::new(),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let vector = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::EmbeddingFormat {
                    line: line_no,
                    message: format!("cannot parse '{p}' as a real"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        table.insert(line_no, word, vector)?;
    }
    if table.dim == 0 {
        return Err(Error::Empty("embedding file has no vectors"));
    }
    Ok(table)
}

/// Lowercases, splits on whitespace and hyphens, and strips punctuation.
pub fn tokenize(label: &str) -> Vec<String> {
    label
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '-')
        .map(|tok| {
            tok.chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
        })
        .filter(|tok| !tok.is_empty())
        .collect()
}

/// Mean of the token vectors of `label`.
pub fn label_vector(label: &str, table: &EmbeddingTable) -> Result<Vec<f64>> {
    let tokens = tokenize(label);
    if tokens.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "label '{label}' has no tokens"
        )));
    }
    let mut sum = vec![0.0; table.dim()];
    for token in &tokens {
        let v = table.get(token).ok_or_else(|| Error::OutOfVocabulary {
            label: label.to_owned(),
            token: token.clone(),
        })?;
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    if tokens.len() > 1 {
        let n = tokens.len() as f64;
        sum.iter_mut().for_each(|s| *s /= n);
    }
    Ok(sum)
}

/// One vector per class; row `k` belongs to class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVectorSet {
    vectors: Array2<f64>,
    class_labels: Vec<String>,
}

impl LabelVectorSet {
    pub fn new(vectors: Array2<f64>, class_labels: Vec<String>) -> Result<Self> {
        if vectors.nrows() != class_labels.len() {
            return Err(Error::Shape(format!(
                "{} label vectors for {} classes",
                vectors.nrows(),
                class_labels.len()
            )));
        }
        if vectors.ncols() == 0 {
            return Err(Error::Empty("label vectors have dimension 0"));
        }
        for i in 0..vectors.nrows() {
            for j in (i + 1)..vectors.nrows() {
                if vectors.row(i) == vectors.row(j) {
                    return Err(Error::DuplicateLabelVector {
                        first: class_labels[i].clone(),
                        second: class_labels[j].clone(),
                    });
                }
            }
        }
        Ok(LabelVectorSet {
            vectors,
            class_labels,
        })
    }

    /// Looks up every label (after `remap`, which substitutes label text)
    /// in `table`.
    pub fn from_labels(
        class_labels: &[String],
        table: &EmbeddingTable,
        remap: &dyn Fn(&str) -> String,
    ) -> Result<Self> {
        let mut vectors = Array2::zeros((class_labels.len(), table.dim()));
        for (k, label) in class_labels.iter().enumerate() {
            let v = label_vector(&remap(label), table)?;
            vectors.row_mut(k).assign(&Array1::from(v));
        }
        Self::new(vectors, class_labels.to_vec())
    }

    pub fn n_classes(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn vector(&self, class: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(class)
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    /// Squared distances from `point` to every label vector.
    pub fn squared_distances_to(&self, point: ArrayView1<'_, f64>) -> Vec<f64> {
        self.vectors
            .rows()
            .into_iter()
            .map(|v| squared_distance(v, point))
            .collect()
    }

    /// Class with the closest label vector; ties go to the lowest class id.
    pub fn nearest(&self, point: ArrayView1<'_, f64>) -> usize {
        argmin(&self.squared_distances_to(point))
    }

    /// Regression targets: the label vector of each instance's class.
    pub fn targets_for(&self, y: &[usize]) -> Array2<f64> {
        self.vectors.select(ndarray::Axis(0), y)
    }
}

pub(crate) fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// C-by-C matrix of squared Euclidean distances between label vectors.
pub fn pairwise_squared_distances(vs: &LabelVectorSet) -> Array2<f64> {
    let c = vs.n_classes();
    let mut d = Array2::zeros((c, c));
    for i in 0..c {
        for j in (i + 1)..c {
            let dist = squared_distance(vs.vector(i), vs.vector(j));
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
        EmbeddingTable::from_entries(entries.iter().map(|(w, v)| (*w, v.to_vec()))).unwrap()
    }

    #[test]
    fn load_two_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "rock 0.1 0.2 0.3\nmetal -1 2.5 3e-2").unwrap();
        let t = load_embeddings(f.path()).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("metal").unwrap(), &[-1.0, 2.5, 0.03]);
    }

    #[test]
    fn load_rejects_inconsistent_dim() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a 1 2 3\nb 1 2 3 4").unwrap();
        assert!(matches!(
            load_embeddings(f.path()),
            Err(Error::EmbeddingFormat { line: 2, .. })
        ));
    }

    #[test]
    fn load_rejects_bad_real() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a 1 x 3").unwrap();
        assert!(matches!(
            load_embeddings(f.path()),
            Err(Error::EmbeddingFormat { line: 1, .. })
        ));
    }

    #[test]
    fn duplicates_keep_first() {
        let t = table(&[("a", &[1.0]), ("A", &[2.0])]);
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("a").unwrap(), &[1.0]);
    }

    #[test]
    fn tokenization() {
        assert_eq!(
            tokenize("Short-term methods"),
            vec!["short", "term", "methods"]
        );
        assert_eq!(tokenize("  no   use. "), vec!["no", "use"]);
    }

    #[test]
    fn single_token_identity() {
        let t = table(&[("rock", &[1.0, 0.0]), ("metal", &[0.0, 1.0])]);
        assert_eq!(label_vector("rock", &t).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn two_token_mean() {
        let t = table(&[("metal", &[0.0, 2.0]), ("cylinder", &[2.0, 0.0])]);
        assert_eq!(label_vector("metal cylinder", &t).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn hyphenated_label_mean() {
        let t = table(&[
            ("short", &[1.0, 2.0, 3.0]),
            ("term", &[4.0, 5.0, 6.0]),
            ("methods", &[7.0, 8.0, 0.0]),
        ]);
        // oracle: (1+4+7)/3, (2+5+8)/3, (3+6+0)/3
        assert_eq!(
            label_vector("short-term methods", &t).unwrap(),
            vec![4.0, 5.0, 3.0]
        );
    }

    #[test]
    fn oov_names_the_token() {
        let t = table(&[("no", &[1.0])]);
        match label_vector("no use", &t) {
            Err(Error::OutOfVocabulary { token, .. }) => assert_eq!(token, "use"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distances_three_four_five() {
        let vs = LabelVectorSet::new(array![[0.0, 0.0], [3.0, 4.0]], vec!["a".into(), "b".into()])
            .unwrap();
        let d = pairwise_squared_distances(&vs);
        assert_eq!(d, array![[0.0, 25.0], [25.0, 0.0]]);
    }

    #[test]
    fn identical_label_vectors_rejected() {
        assert!(matches!(
            LabelVectorSet::new(array![[1.0, 1.0], [1.0, 1.0]], vec!["a".into(), "b".into()]),
            Err(Error::DuplicateLabelVector { .. })
        ));
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let vs = LabelVectorSet::new(
            array![[0.0], [5.0], [2.0]],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        assert_eq!(vs.nearest(array![1.0].view()), 0);
    }

    #[test]
    fn remap_substitutes_text() {
        let t = table(&[("rock", &[1.0]), ("stone", &[1.1]), ("metal", &[5.0])]);
        let labels = vec!["R".to_string(), "M".to_string()];
        let vs = LabelVectorSet::from_labels(&labels, &t, &|l| {
            if l == "R" { "stone" } else { "metal" }.to_string()
        })
        .unwrap();
        assert_eq!(vs.vector(0).to_vec(), vec![1.1]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn label_vector_ignores_token_order(
                vecs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..5),
                seed in any::<u64>(),
            ) {
                let words: Vec<String> = (0..vecs.len()).map(|i| format!("w{i}")).collect();
                let t = EmbeddingTable::from_entries(words.iter().zip(vecs.iter().cloned())).unwrap();
                let mut shuffled = words.clone();
                let k = (seed as usize) % shuffled.len();
                shuffled.rotate_left(k);
                shuffled.reverse();
                let a = label_vector(&words.join(" "), &t).unwrap();
                let b = label_vector(&shuffled.join(" "), &t).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }

            #[test]
            fn distance_matrix_identity(
                rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 2..6),
            ) {
                let c = rows.len();
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                let v = Array2::from_shape_vec((c, 3), flat).unwrap();
                let Ok(vs) = LabelVectorSet::new(v.clone(), (0..c).map(|i| i.to_string()).collect()) else {
                    return Ok(());
                };
                let d = pairwise_squared_distances(&vs);
                for i in 0..c {
                    prop_assert_eq!(d[[i, i]], 0.0);
                    for j in 0..c {
                        prop_assert!(d[[i, j]] >= 0.0);
                        prop_assert_eq!(d[[i, j]], d[[j, i]]);
                        let (a, b) = (v.row(i), v.row(j));
                        let alt = a.dot(&a) + b.dot(&b) - 2.0 * a.dot(&b);
                        prop_assert!((d[[i, j]] - alt).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
