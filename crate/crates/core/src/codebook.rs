//! Discrete vocabulary, token maps and the embedding into Euclidean feature space.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::scalar::Scalar;

/// A vocabulary of `V` embedding vectors of dimension `C`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodebookDoc<T>", into = "CodebookDoc<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Codebook<T> {
    entries: Vec<T>,
    vocab: usize,
    dim: usize,
    seed: Option<u64>,
}

/// On-disk form: `{V, C, seed, entries: [[...], ...]}`.
#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
struct CodebookDoc<T> {
    #[serde(rename = "V")]
    vocab: usize,
    #[serde(rename = "C")]
    dim: usize,
    #[serde(default)]
    seed: Option<u64>,
    entries: Vec<Vec<T>>,
}

impl<T: Scalar> TryFrom<CodebookDoc<T>> for Codebook<T> {
    type Error = Error;

    fn try_from(doc: CodebookDoc<T>) -> Result<Self> {
        if doc.entries.len() != doc.vocab {
            return Err(Error::param(format!(
                "codebook declares V={} but has {} entries",
                doc.vocab,
                doc.entries.len()
            )));
        }
        let mut cb = Codebook::new(doc.entries, false)?;
        if cb.dim != doc.dim {
            return Err(Error::param(format!(
                "codebook declares C={} but entries have dimension {}",
                doc.dim, cb.dim
            )));
        }
        cb.seed = doc.seed;
        Ok(cb)
    }
}

impl<T: Scalar> From<Codebook<T>> for CodebookDoc<T> {
    fn from(cb: Codebook<T>) -> Self {
        CodebookDoc {
            vocab: cb.vocab,
            dim: cb.dim,
            seed: cb.seed,
            entries: cb.entries.chunks(cb.dim).map(<[T]>::to_vec).collect(),
        }
    }
}

impl<T: Scalar> Codebook<T> {
    /// Builds a codebook from explicit entries.
    ///
    /// With `require_distinct`, any two identical entries are rejected.
    pub fn new(entries: Vec<Vec<T>>, require_distinct: bool) -> Result<Self> {
        let vocab = entries.len();
        if vocab < 2 {
            return Err(Error::param(format!("codebook needs V >= 2, got {vocab}")));
        }
        let dim = entries[0].len();
        if dim < 1 {
            return Err(Error::param("codebook needs C >= 1"));
        }
        let mut flat = Vec::with_capacity(vocab * dim);
        for (i, e) in entries.iter().enumerate() {
            if e.len() != dim {
                return Err(Error::param(format!(
                    "entry {i} has dimension {}, expected {dim}",
                    e.len()
                )));
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(Error::param(format!("entry {i} has a non-finite component")));
            }
            flat.extend_from_slice(e);
        }
        let cb = Codebook {
            entries: flat,
            vocab,
            dim,
            seed: None,
        };
        if require_distinct {
            if let Some((a, b)) = cb.first_duplicate() {
                return Err(Error::param(format!("entries {a} and {b} are identical")));
            }
        }
        Ok(cb)
    }

    fn first_duplicate(&self) -> Option<(usize, usize)> {
        (0..self.vocab)
            .flat_map(|a| (a + 1..self.vocab).map(move |b| (a, b)))
            .find(|&(a, b)| self.entry(a) == self.entry(b))
    }

    /// Vocabulary size `V`.
    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    /// Embedding dimension `C`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn entry(&self, index: usize) -> &[T] {
        &self.entries[index * self.dim..(index + 1) * self.dim]
    }

    pub fn get(&self, index: usize) -> Result<&[T]> {
        if index >= self.vocab {
            return Err(Error::Index {
                index,
                size: self.vocab,
            });
        }
        Ok(self.entry(index))
    }

    pub fn entries(&self) -> impl Iterator<Item = &[T]> {
        self.entries.chunks(self.dim)
    }

    /// Largest Euclidean distance between any two entries.
    pub fn max_spread(&self) -> T {
        let mut best = T::zero();
        for a in 0..self.vocab {
            for b in a + 1..self.vocab {
                let d = sq_dist(self.entry(a), self.entry(b)).sqrt();
                if d > best {
                    best = d;
                }
            }
        }
        best
    }

    /// Concatenates the entries of every token of `map` in row-major order.
    ///
    /// The result has length `h * w * C`.
    pub fn embed(&self, map: &TokenMap) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(map.len() * self.dim);
        for &t in map.tokens() {
            out.extend_from_slice(self.get(t)?);
        }
        Ok(out)
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, v| acc + v)
}

/// Draws a codebook with i.i.d. standard normal entries, deterministic in `seed`.
///
/// Entries that collide with an earlier one are redrawn, so the result is pairwise distinct.
pub fn make_synthetic_codebook<T: Scalar>(vocab: usize, dim: usize, seed: u64) -> Result<Codebook<T>> {
    if vocab < 2 {
        return Err(Error::param(format!("codebook needs V >= 2, got {vocab}")));
    }
    if dim < 1 {
        return Err(Error::param("codebook needs C >= 1"));
    }
    let mut rng = rng::stream(seed, &[domain::CODEBOOK]);
    let mut entries: Vec<Vec<T>> = Vec::with_capacity(vocab);
    while entries.len() < vocab {
        let e: Vec<T> = (0..dim)
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        if !entries.contains(&e) {
            entries.push(e);
        }
    }
    let mut cb = Codebook::new(entries, true)?;
    cb.seed = Some(seed);
    Ok(cb)
}

/// An `h × w` grid of codebook indices at one scale, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenMap {
    scale: usize,
    height: usize,
    width: usize,
    tokens: Vec<usize>,
}

impl TokenMap {
    pub fn new(scale: usize, height: usize, width: usize, tokens: Vec<usize>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param(format!(
                "token map resolution must be positive, got {height}x{width}"
            )));
        }
        if tokens.len() != height * width {
            return Err(Error::param(format!(
                "token map {height}x{width} needs {} tokens, got {}",
                height * width,
                tokens.len()
            )));
        }
        Ok(TokenMap {
            scale,
            height,
            width,
            tokens,
        })
    }

    /// A map with every position set to `token`.
    pub fn filled(scale: usize, height: usize, width: usize, token: usize) -> Result<Self> {
        Self::new(scale, height, width, vec![token; height * width])
    }

    /// Checks every index against a vocabulary of size `vocab`.
    pub fn validate(&self, vocab: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t >= vocab) {
            Some(&index) => Err(Error::Index { index, size: vocab }),
            None => Ok(()),
        }
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, row: usize, col: usize) -> usize {
        self.tokens[row * self.width + col]
    }

    /// Number of positions where the two maps differ. Maps must share a resolution.
    pub fn hamming(&self, other: &TokenMap) -> usize {
        debug_assert_eq!(self.resolution(), other.resolution());
        self.tokens
            .iter()
            .zip(&other.tokens)
            .filter(|(a, b)| a != b)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn two_by_one() -> Codebook<f64> {
        Codebook::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], true).unwrap()
    }

    #[test]
    fn synthetic_codebook_is_deterministic() {
        let a = make_synthetic_codebook::<f64>(2, 1, 7).unwrap();
        let b = make_synthetic_codebook::<f64>(2, 1, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.entry(0), a.entry(1));
    }

    #[test]
    fn synthetic_codebook_entries_pairwise_distinct() {
        let cb = make_synthetic_codebook::<f64>(16, 8, 0).unwrap();
        assert_eq!(cb.vocab_size(), 16);
        assert_eq!(cb.dim(), 8);
        for a in 0..16 {
            assert_eq!(cb.entry(a).len(), 8);
            for b in a + 1..16 {
                let d: f64 = cb
                    .entry(a)
                    .iter()
                    .zip(cb.entry(b))
                    .map(|(x, y)| (x - y).powi(2))
                    .sum();
                assert!(d > 0.0, "entries {a} and {b} coincide");
            }
        }
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(matches!(
            make_synthetic_codebook::<f64>(1, 4, 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            make_synthetic_codebook::<f64>(4, 0, 0),
            Err(Error::Parameter(_))
        ));
        assert!(Codebook::new(vec![vec![1.0], vec![1.0]], true).is_err());
        assert!(Codebook::new(vec![vec![1.0], vec![1.0]], false).is_ok());
        assert!(Codebook::new(vec![vec![1.0], vec![f64::NAN]], false).is_err());
        assert!(Codebook::new(vec![vec![1.0, 2.0], vec![1.0]], false).is_err());
    }

    #[test]
    fn embed_concatenates_entries() {
        let cb = two_by_one();
        let map = TokenMap::new(0, 1, 2, vec![0, 1]).unwrap();
        assert_eq!(cb.embed(&map).unwrap(), vec![1.0, 0.0, 0.0, 1.0]);

        let zeros = TokenMap::filled(0, 2, 2, 0).unwrap();
        assert_eq!(cb.embed(&zeros).unwrap(), [1.0, 0.0].repeat(4));
    }

    #[test]
    fn embed_rejects_out_of_range() {
        let cb = two_by_one();
        let map = TokenMap::new(0, 1, 2, vec![0, 2]).unwrap();
        assert!(matches!(cb.embed(&map), Err(Error::Index { index: 2, size: 2 })));
        assert!(map.validate(2).is_err());
    }

    #[test]
    fn embed_slices_match_lookup() {
        let cb = make_synthetic_codebook::<f64>(16, 8, 3).unwrap();
        let mut rng = rng::stream(5, &[1]);
        let tokens: Vec<usize> = (0..4).map(|_| rng.random_range(0..16)).collect();
        let map = TokenMap::new(1, 2, 2, tokens.clone()).unwrap();
        let f = cb.embed(&map).unwrap();
        assert_eq!(f.len(), 32);
        for (p, &t) in tokens.iter().enumerate() {
            assert_eq!(&f[p * 8..(p + 1) * 8], cb.entry(t));
        }
    }

    #[test]
    fn token_map_shape_checked() {
        assert!(TokenMap::new(0, 2, 2, vec![0; 3]).is_err());
        assert!(TokenMap::new(0, 0, 2, vec![]).is_err());
    }

    #[test]
    fn json_round_trip_and_schema() {
        let cb = make_synthetic_codebook::<f64>(3, 2, 11).unwrap();
        let json = serde_json::to_value(&cb).unwrap();
        assert_eq!(json["V"], 3);
        assert_eq!(json["C"], 2);
        assert_eq!(json["seed"], 11);
        assert_eq!(json["entries"].as_array().unwrap().len(), 3);
        let back: Codebook<f64> = serde_json::from_value(json).unwrap();
        assert_eq!(back, cb);

        let bad = r#"{"V": 3, "C": 1, "entries": [[0.0], [1.0]]}"#;
        assert!(serde_json::from_str::<Codebook<f64>>(bad).is_err());
    }

    proptest! {
        #[test]
        fn embed_is_injective(seed in 0u64..500, a in proptest::collection::vec(0usize..6, 4),
                              b in proptest::collection::vec(0usize..6, 4)) {
            let cb = make_synthetic_codebook::<f64>(6, 3, seed).unwrap();
            let ma = TokenMap::new(0, 2, 2, a.clone()).unwrap();
            let mb = TokenMap::new(0, 2, 2, b.clone()).unwrap();
            let (ea, eb) = (cb.embed(&ma).unwrap(), cb.embed(&mb).unwrap());
            prop_assert_eq!(a == b, ea == eb);
        }

        #[test]
        fn squared_distance_decomposes_by_position(seed in 0u64..500,
                a in proptest::collection::vec(0usize..8, 6),
                b in proptest::collection::vec(0usize..8, 6)) {
            let cb = make_synthetic_codebook::<f64>(8, 4, seed).unwrap();
            let ma = TokenMap::new(0, 2, 3, a.clone()).unwrap();
            let mb = TokenMap::new(0, 2, 3, b.clone()).unwrap();
            let whole = sq_dist(&cb.embed(&ma).unwrap(), &cb.embed(&mb).unwrap());
            let parts: f64 = a.iter().zip(&b).map(|(&x, &y)| sq_dist(cb.entry(x), cb.entry(y))).sum();
            prop_assert!((whole - parts).abs() <= 1e-12 * parts.max(1e-300));
        }
    }
}
