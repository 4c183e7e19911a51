// SPDX-License-Identifier: MIT OR Apache-2.0

//! Entropy-weighted steering vectors.
//!
//! Given logged prompt activations `z[k][t]` with action entropies
//! `h[k][t]`, the steering direction is
//!
//! ```text
//! u = (1/Z) sum_k sum_t h[k][t] * (z[k][t] - mean_t' z[k][t'])     Z = sum h
//! ```
//!
//! Every sum is accumulated exactly and rounded once, so the result does not
//! depend on run order, sample order or thread count.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::SteeringSpec;
use crate::error::{Error, Result};
use crate::numeric::ExactSum;
use crate::prompting::ScenarioKind;
use crate::seed;

/// One logged step: prompt activation and the action entropy at that prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub activation: Vec<f64>,
    pub entropy_nats: f64,
}

/// Activations and entropies from `K` interaction runs at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationDataset {
    pub layer: usize,
    pub scenario: ScenarioKind,
    pub runs: Vec<Vec<Sample>>,
    /// Steps dropped because their entropy was undefined.
    #[serde(default)]
    pub n_excluded: usize,
}

impl ActivationDataset {
    pub fn new(layer: usize, scenario: ScenarioKind, runs: Vec<Vec<Sample>>) -> Result<Self> {
        let ds = Self {
            layer,
            scenario,
            runs,
            n_excluded: 0,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.runs.first().and_then(|r| r.first()) else {
            return Err(Error::EmptyDataset);
        };
        let dim = first.activation.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("activations must be nonempty".into()));
        }
        for (k, run) in self.runs.iter().enumerate() {
            if run.is_empty() {
                return Err(Error::InvalidArgument(format!("run {k} is empty")));
            }
            for s in run {
                if s.activation.len() != dim {
                    return Err(Error::DimMismatch {
                        expected: dim,
                        got: s.activation.len(),
                    });
                }
                if !(s.entropy_nats.is_finite() && s.entropy_nats >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "entropy {} in run {k} is not a finite nonnegative number",
                        s.entropy_nats
                    )));
                }
                if s.activation.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidArgument(format!("non-finite activation in run {k}")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.runs.first().and_then(|r| r.first()).map_or(0, |s| s.activation.len())
    }

    pub fn n_samples(&self) -> usize {
        self.runs.iter().map(Vec::len).sum()
    }

    /// SHA-256 over layer, scenario, run lengths and the bit patterns of all
    /// values, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.layer as u64).to_le_bytes());
        h.update([self.scenario.code()]);
        h.update((self.runs.len() as u64).to_le_bytes());
        for run in &self.runs {
            h.update((run.len() as u64).to_le_bytes());
            for s in run {
                h.update(s.entropy_nats.to_bits().to_le_bytes());
                for x in &s.activation {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorMetadata {
    pub dataset_hash: String,
    pub n_runs: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub n_excluded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_seed: Option<u64>,
}

/// A steering direction for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub values: Vec<f64>,
    pub layer: usize,
    pub source_scenario: ScenarioKind,
    /// Total entropy `Z` of the source dataset.
    pub normalizer: f64,
    /// Feature-shuffled control vector.
    pub control: bool,
    pub metadata: VectorMetadata,
}

impl SteeringVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Injection request at `multiplier`.
    pub fn spec(&self, multiplier: f64) -> SteeringSpec {
        SteeringSpec::new(self.layer, multiplier, self.values.clone())
    }

    /// The vector as it will read back from disk (values rounded to f32).
    pub fn quantized(&self) -> Self {
        Self {
            values: self.values.iter().map(|&x| f64::from(x as f32)).collect(),
            ..self.clone()
        }
    }
}

/// Per-dimension exact sums of `h * (z - run mean)` over one run, plus the
/// run's entropy total.
fn run_terms(run: &[Sample], dim: usize) -> (Vec<ExactSum>, ExactSum) {
    let n = run.len() as f64;
    let mut mean = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut s = ExactSum::new();
        for sample in run {
            s.add(sample.activation[j]);
        }
        mean.push(s.value() / n);
    }
    let mut acc = vec![ExactSum::new(); dim];
    let mut z = ExactSum::new();
    for sample in run {
        let h = sample.entropy_nats;
        z.add(h);
        if h == 0.0 {
            continue;
        }
        for j in 0..dim {
            acc[j].add(h * (sample.activation[j] - mean[j]));
        }
    }
    (acc, z)
}

/// Entropy-weighted, run-centred average of the dataset's activations.
pub fn compute_steering_vector(dataset: &ActivationDataset) -> Result<SteeringVector> {
    dataset.validate()?;
    let dim = dataset.dim();
    let per_run: Vec<_> = dataset.runs.par_iter().map(|r| run_terms(r, dim)).collect();

    let mut total = vec![ExactSum::new(); dim];
    let mut z = ExactSum::new();
    for (acc, zk) in &per_run {
        for (t, a) in total.iter_mut().zip(acc) {
            t.merge(a);
        }
        z.merge(zk);
    }
    let z = z.value();
    if z <= 0.0 {
        return Err(Error::AllZeroEntropy);
    }
    Ok(SteeringVector {
        values: total.iter().map(|s| s.value() / z).collect(),
        layer: dataset.layer,
        source_scenario: dataset.scenario,
        normalizer: z,
        control: false,
        metadata: VectorMetadata {
            dataset_hash: dataset.content_hash(),
            n_runs: dataset.runs.len(),
            n_samples: dataset.n_samples(),
            n_excluded: dataset.n_excluded,
            shuffle_seed: None,
        },
    })
}

/// Control vector: the same values under a seeded uniform permutation.
pub fn shuffle_features(vector: &SteeringVector, seed: u64) -> SteeringVector {
    let mut values = vector.values.clone();
    values.shuffle(&mut seed::rng(seed::split(seed, seed::stream::SHUFFLE, 0)));
    let mut out = vector.clone();
    out.values = values;
    out.control = true;
    out.metadata.shuffle_seed = Some(seed);
    out
}

pub const VECTOR_MAGIC: &[u8; 4] = b"EAST";
pub const VECTOR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Trailer {
    dim: usize,
    #[serde(flatten)]
    metadata: VectorMetadata,
}

/// Encode a vector (values rounded to f32).
pub fn encode_vector(v: &SteeringVector) -> Result<Vec<u8>> {
    let layer = u32::try_from(v.layer).map_err(|_| Error::InvalidArgument("layer exceeds u32".into()))?;
    let dim = u32::try_from(v.dim()).map_err(|_| Error::InvalidArgument("dim exceeds u32".into()))?;
    let trailer = serde_json::to_vec(&Trailer {
        dim: v.dim(),
        metadata: v.metadata.clone(),
    })?;
    let mut out = Vec::with_capacity(30 + 4 * v.dim() + trailer.len());
    out.extend_from_slice(VECTOR_MAGIC);
    out.extend_from_slice(&VECTOR_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&layer.to_le_bytes());
    out.push(v.source_scenario.code());
    out.push(u8::from(v.control));
    out.extend_from_slice(&v.normalizer.to_le_bytes());
    for &x in &v.values {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
    out.extend_from_slice(&trailer);
    Ok(out)
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Truncated {
                what: self.what,
                detail: format!("needed {n} more bytes, {} left", self.buf.len()),
            });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len()
    }

    pub(crate) fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        if self.take(4).map_err(|_| Error::BadMagic { what: self.what })? != magic {
            return Err(Error::BadMagic { what: self.what });
        }
        let found = self.u32()?;
        if found != version {
            return Err(Error::VersionMismatch {
                what: self.what,
                found,
                expected: version,
            });
        }
        Ok(())
    }
}

pub fn decode_vector(bytes: &[u8]) -> Result<SteeringVector> {
    let mut c = Cursor::new(bytes, "vector");
    c.header(VECTOR_MAGIC, VECTOR_VERSION)?;
    let dim = c.u32()? as usize;
    let layer = c.u32()? as usize;
    let code = c.u8()?;
    let source_scenario = ScenarioKind::from_code(code).ok_or_else(|| Error::Truncated {
        what: "vector",
        detail: format!("unknown scenario code {code}"),
    })?;
    let control = match c.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Truncated {
                what: "vector",
                detail: format!("control flag {other}"),
            })
        }
    };
    let normalizer = c.f64()?;
    let mut values = Vec::with_capacity(dim.min(c.remaining() / 4));
    for _ in 0..dim {
        values.push(f64::from(c.f32()?));
    }
    let len = c.u32()? as usize;
    let trailer: Trailer = serde_json::from_slice(c.take(len)?).map_err(|e| Error::Truncated {
        what: "vector",
        detail: format!("metadata: {e}"),
    })?;
    if c.remaining() != 0 {
        return Err(Error::Truncated {
            what: "vector",
            detail: format!("{} trailing bytes", c.remaining()),
        });
    }
    if trailer.dim != dim {
        return Err(Error::DimMismatch {
            expected: trailer.dim,
            got: dim,
        });
    }
    Ok(SteeringVector {
        values,
        layer,
        source_scenario,
        normalizer,
        control,
        metadata: trailer.metadata,
    })
}

pub fn save_vector(v: &SteeringVector, path: &Path) -> Result<()> {
    let bytes = encode_vector(v)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_vector(path: &Path) -> Result<SteeringVector> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_vector(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(z: &[f64], h: f64) -> Sample {
        Sample {
            activation: z.to_vec(),
            entropy_nats: h,
        }
    }

    fn ds(runs: Vec<Vec<Sample>>) -> ActivationDataset {
        ActivationDataset::new(4, ScenarioKind::Buttons, runs).unwrap()
    }

    #[test]
    fn singleton_run_gives_zero_vector() {
        let v = compute_steering_vector(&ds(vec![vec![sample(&[3.0, -1.0, 7.5], 0.4)]])).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
        assert_eq!(v.normalizer, 0.4);
    }

    #[test]
    fn hand_computed_example() {
        // Run means (1, 0) and (5, 5); centred rows weighted by h.
        let d = ds(vec![
            vec![sample(&[0.0, 1.0], 1.0), sample(&[2.0, -1.0], 0.0)],
            vec![sample(&[6.0, 5.0], 0.5), sample(&[4.0, 5.0], 0.5)],
        ]);
        let v = compute_steering_vector(&d).unwrap();
        // (1*(-1,1) + 0.5*(1,0) + 0.5*(-1,0)) / 2
        assert_eq!(v.values, vec![-0.5, 0.5]);
        assert_eq!(v.normalizer, 2.0);
    }

    #[test]
    fn equal_entropies_give_mean_of_centred_activations() {
        let runs = vec![
            vec![sample(&[1.0, 2.0], 0.3), sample(&[3.0, 8.0], 0.3), sample(&[2.0, 2.0], 0.3)],
            vec![sample(&[0.0, 1.0], 0.3), sample(&[4.0, 1.0], 0.3)],
        ];
        let v = compute_steering_vector(&ds(runs)).unwrap();
        // Centred activations sum to zero within each run.
        assert!(v.values.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            compute_steering_vector(&ActivationDataset {
                layer: 0,
                scenario: ScenarioKind::Buttons,
                runs: vec![],
                n_excluded: 0
            }),
            Err(Error::EmptyDataset)
        ));
        let zero = ds(vec![vec![sample(&[1.0], 0.0), sample(&[2.0], 0.0)]]);
        assert!(matches!(compute_steering_vector(&zero), Err(Error::AllZeroEntropy)));
        assert!(ActivationDataset::new(0, ScenarioKind::Buttons, vec![vec![sample(&[1.0], 0.1)], vec![]]).is_err());
        assert!(matches!(
            ActivationDataset::new(0, ScenarioKind::Buttons, vec![vec![sample(&[1.0], 0.1), sample(&[1.0, 2.0], 0.1)]]),
            Err(Error::DimMismatch { .. })
        ));
        assert!(ActivationDataset::new(0, ScenarioKind::Buttons, vec![vec![sample(&[1.0], -0.1)]]).is_err());
    }

    #[test]
    fn shuffle_preserves_multiset() {
        let v = compute_steering_vector(&ds(vec![vec![
            sample(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.2),
            sample(&[0.0, -2.0, 9.0, 1.0, 0.5], 0.7),
        ]]))
        .unwrap();
        let s = shuffle_features(&v, 9);
        assert!(s.control && !v.control);
        assert_eq!(s.metadata.shuffle_seed, Some(9));
        let sort = |xs: &[f64]| {
            let mut xs = xs.to_vec();
            xs.sort_by(f64::total_cmp);
            xs
        };
        assert_eq!(sort(&s.values), sort(&v.values));
        assert_eq!(shuffle_features(&v, 9), s);
    }

    #[test]
    fn shuffled_high_dim_vectors_are_nearly_orthogonal() {
        let mut rng = seed::rng(1);
        let values: Vec<f64> = (0..4096).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
        let v = SteeringVector {
            values,
            layer: 0,
            source_scenario: ScenarioKind::Buttons,
            normalizer: 1.0,
            control: false,
            metadata: VectorMetadata {
                dataset_hash: String::new(),
                n_runs: 1,
                n_samples: 1,
                n_excluded: 0,
                shuffle_seed: None,
            },
        };
        let norm2 = crate::numeric::dot(&v.values, &v.values);
        let mean_cos: f64 = (0..100)
            .map(|s| crate::numeric::dot(&v.values, &shuffle_features(&v, s).values) / norm2)
            .sum::<f64>()
            / 100.0;
        assert!(mean_cos.abs() < 0.1, "{mean_cos}");
    }

    fn example_vector() -> SteeringVector {
        compute_steering_vector(&ds(vec![
            vec![sample(&[0.1, 0.2, 0.3], 0.5), sample(&[1.0, -3.0, 0.25], 0.1)],
            vec![sample(&[5.0, 5.0, 5.0], 0.6), sample(&[-1.0, 0.0, 1e-3], 0.0)],
        ]))
        .unwrap()
    }

    #[test]
    fn file_round_trip_is_exact_after_quantization() {
        let v = example_vector();
        let back = decode_vector(&encode_vector(&v).unwrap()).unwrap();
        assert_eq!(back, v.quantized());
        let again = decode_vector(&encode_vector(&back).unwrap()).unwrap();
        assert_eq!(again, back);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.east");
        save_vector(&v, &path).unwrap();
        assert_eq!(load_vector(&path).unwrap(), v.quantized());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let good = encode_vector(&example_vector()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_vector(&bad), Err(Error::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_vector(&bad), Err(Error::VersionMismatch { found: 2, .. })));
        assert!(matches!(decode_vector(&good[..good.len() - 3]), Err(Error::Truncated { .. })));
        assert!(matches!(decode_vector(&good[..2]), Err(Error::BadMagic { .. })));
        let mut bad = good.clone();
        bad[8] = 2; // header dim no longer matches the trailer
        assert!(decode_vector(&bad).is_err());
    }

    #[test]
    fn dataset_hash_is_content_sensitive() {
        let a = ds(vec![vec![sample(&[1.0, 2.0], 0.5)]]);
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.runs[0][0].activation[1] = 2.0000001;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    fn arb_dataset() -> impl Strategy<Value = ActivationDataset> {
        (1usize..5, 1usize..6).prop_flat_map(|(k, d)| {
            proptest::collection::vec(
                proptest::collection::vec(
                    (proptest::collection::vec(-10.0f64..10.0, d), 0.0f64..0.7),
                    1..6,
                ),
                k,
            )
            .prop_map(|runs| ActivationDataset {
                layer: 2,
                scenario: ScenarioKind::Buttons,
                runs: runs
                    .into_iter()
                    .map(|r| r.into_iter().map(|(z, h)| sample(&z, h)).collect())
                    .collect(),
                n_excluded: 0,
            })
            .prop_filter("positive total entropy", |d| {
                d.runs.iter().flatten().any(|s| s.entropy_nats > 0.0)
            })
        })
    }

    proptest! {
        #[test]
        fn run_order_does_not_change_bits(d in arb_dataset(), rot in 0usize..5) {
            let u = compute_steering_vector(&d).unwrap();
            let mut p = d.clone();
            let n = p.runs.len();
            p.runs.rotate_left(rot % n);
            p.runs.reverse();
            let v = compute_steering_vector(&p).unwrap();
            prop_assert_eq!(u.values, v.values);
        }

        #[test]
        fn sample_order_within_runs_does_not_change_bits(d in arb_dataset()) {
            let u = compute_steering_vector(&d).unwrap();
            let mut p = d.clone();
            for r in &mut p.runs {
                r.reverse();
            }
            prop_assert_eq!(u.values, compute_steering_vector(&p).unwrap().values);
        }
    }
}
