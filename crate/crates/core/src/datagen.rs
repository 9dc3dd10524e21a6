//! Random-search dataset generation.
//!
//! Each draw picks a length uniformly from the configured range and then
//! every device uniformly from the non-PAD vocabulary. Draw `i` uses its own
//! ChaCha stream `i` under the run seed, so results do not depend on the
//! number of worker threads.

use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entanglement::{summarize, EntanglementError, EntanglementSummary};
use crate::optics::{run_setup, SimConfig, SimError};
use crate::repr::{Record, RecordLabel, Setup, Vocabulary};

/// Shortest setup the sampler produces by default.
pub const MIN_SAMPLED_LEN: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Entanglement(#[from] EntanglementError),
}

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("invalid generation spec: {0}")]
    Spec(String),
    #[error("acceptance rate {rate:.2e} after {draws} draws is below the floor {floor:.2e}")]
    Timeout { draws: u64, rate: f64, floor: f64 },
    #[error("reached the draw limit of {0} before collecting enough records")]
    DrawLimit(u64),
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

/// A setup with its entanglement label.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub setup: Setup,
    pub summary: EntanglementSummary,
}

impl Labeled {
    pub fn total(&self) -> f64 {
        self.summary.total
    }

    pub fn n_tp(&self) -> usize {
        self.setup.two_photon_count()
    }

    pub fn len(&self) -> usize {
        self.setup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.setup.is_empty()
    }

    pub fn is_entangled(&self) -> bool {
        self.summary.is_entangled()
    }

    pub fn to_record(&self) -> Record {
        Record {
            setup: self.setup.clone(),
            label: Some(RecordLabel {
                total: self.summary.total,
                ranks: self.summary.ranks,
            }),
        }
    }
}

/// Uniform length in `lengths`, then uniform devices.
pub fn sample_setup_in<R: Rng + ?Sized>(
    rng: &mut R,
    vocab: &Vocabulary,
    lengths: std::ops::RangeInclusive<usize>,
) -> Setup {
    let len = rng.random_range(lengths);
    (0..len)
        .map(|_| {
            let idx = rng.random_range(1..vocab.size());
            vocab.device(idx).expect("non-PAD index")
        })
        .collect()
}

/// Length uniform on `3..=T`.
pub fn sample_setup<R: Rng + ?Sized>(rng: &mut R, vocab: &Vocabulary) -> Setup {
    sample_setup_in(rng, vocab, MIN_SAMPLED_LEN..=vocab.max_len())
}

/// Simulates and labels a setup; an empty post-selection is unentangled.
pub fn label(setup: &Setup, sim: &SimConfig) -> Result<Labeled, LabelError> {
    let summary = match run_setup(setup, sim) {
        Ok(state) => summarize(&state)?,
        Err(SimError::EmptyState) => EntanglementSummary::unentangled(),
        Err(e) => return Err(e.into()),
    };
    Ok(Labeled {
        setup: setup.clone(),
        summary,
    })
}

/// Filter and budget for one generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Entangled records must satisfy `s_min < S` (strict).
    pub s_min: Option<f64>,
    /// Entangled records must satisfy `S < s_max` (strict).
    pub s_max: Option<f64>,
    pub ntp_min: usize,
    /// Target fraction of entangled records. `None` keeps whatever passes the
    /// S bounds, which then apply to every record.
    pub mix: Option<f64>,
    pub seed: u64,
    pub workers: usize,
    /// Abort when the acceptance rate falls below this after `patience` draws.
    pub min_acceptance: f64,
    pub patience: u64,
    pub max_draws: Option<u64>,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            count: 1000,
            min_len: MIN_SAMPLED_LEN,
            max_len: 12,
            s_min: None,
            s_max: None,
            ntp_min: 0,
            mix: None,
            seed: 0,
            workers: 1,
            min_acceptance: 1e-4,
            patience: 20_000,
            max_draws: None,
        }
    }
}

impl GenSpec {
    fn validate(&self, vocab: &Vocabulary) -> Result<(), GenError> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(GenError::Spec(format!(
                "length range {}..={} is empty or starts at 0",
                self.min_len, self.max_len
            )));
        }
        if self.max_len > vocab.max_len() {
            return Err(GenError::Spec(format!(
                "max_len {} exceeds the vocabulary maximum {}",
                self.max_len,
                vocab.max_len()
            )));
        }
        if let Some(m) = self.mix {
            if !(0.0..=1.0).contains(&m) {
                return Err(GenError::Spec(format!("mix {m} is not a fraction")));
            }
        }
        if let (Some(lo), Some(hi)) = (self.s_min, self.s_max) {
            if lo >= hi {
                return Err(GenError::Spec(format!("S range ({lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }

    fn s_in_range(&self, s: f64) -> bool {
        self.s_min.is_none_or(|lo| s > lo) && self.s_max.is_none_or(|hi| s < hi)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenStats {
    pub draws: u64,
    pub accepted: usize,
    pub duplicates: u64,
    pub skipped_overflow: u64,
    pub entangled_draws: u64,
    pub entangled_accepted: usize,
    pub acceptance_rate: f64,
    pub wall_time_secs: f64,
}

/// RNG for draw `index` of run `seed`.
pub fn draw_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw(vocab: &Vocabulary, spec: &GenSpec, index: u64) -> Result<Labeled, LabelError> {
    let mut rng = draw_rng(spec.seed, index);
    let setup = sample_setup_in(&mut rng, vocab, spec.min_len..=spec.max_len);
    label(&setup, &vocab.sim_config())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, GenError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| GenError::Pool(e.to_string()))
}

/// Samples until `spec.count` distinct records pass the filter.
pub fn generate_dataset(
    vocab: &Vocabulary,
    spec: &GenSpec,
) -> Result<(Vec<Labeled>, GenStats), GenError> {
    spec.validate(vocab)?;
    let start = Instant::now();
    let pool = pool(spec.workers)?;
    let (want_ent, want_unent) = match spec.mix {
        Some(f) => {
            let e = (f * spec.count as f64).round() as usize;
            (e, spec.count - e)
        }
        None => (spec.count, 0),
    };
    let mut stats = GenStats::default();
    let mut seen: HashSet<Setup> = HashSet::new();
    let mut ent = Vec::new();
    let mut unent = Vec::new();
    let block = 512 * spec.workers.max(1) as u64;
    let mut next: u64 = 0;

    let done = |ent: &Vec<Labeled>, unent: &Vec<Labeled>| match spec.mix {
        Some(_) => ent.len() >= want_ent && unent.len() >= want_unent,
        None => ent.len() >= want_ent,
    };

    while !done(&ent, &unent) {
        if let Some(limit) = spec.max_draws {
            if next >= limit {
                return Err(GenError::DrawLimit(limit));
            }
        }
        let end = match spec.max_draws {
            Some(limit) => (next + block).min(limit),
            None => next + block,
        };
        let results: Vec<Result<Labeled, LabelError>> =
            pool.install(|| (next..end).into_par_iter().map(|i| draw(vocab, spec, i)).collect());
        for res in results {
            if done(&ent, &unent) {
                break;
            }
            stats.draws += 1;
            let rec = match res {
                Ok(r) => r,
                Err(_) => {
                    stats.skipped_overflow += 1;
                    continue;
                }
            };
            let entangled = rec.is_entangled();
            if entangled {
                stats.entangled_draws += 1;
            }
            if rec.n_tp() < spec.ntp_min {
                continue;
            }
            let bucket = match spec.mix {
                None if spec.s_in_range(rec.total()) => &mut ent,
                None => continue,
                Some(_) if entangled && spec.s_in_range(rec.total()) => {
                    if ent.len() >= want_ent {
                        continue;
                    }
                    &mut ent
                }
                Some(_) if !entangled => {
                    if unent.len() >= want_unent {
                        continue;
                    }
                    &mut unent
                }
                Some(_) => continue,
            };
            if !seen.insert(rec.setup.clone()) {
                stats.duplicates += 1;
                continue;
            }
            bucket.push(rec);
        }
        next = end;
        let accepted = (ent.len() + unent.len()) as f64;
        if stats.draws >= spec.patience && accepted / (stats.draws as f64) < spec.min_acceptance
        {
            return Err(GenError::Timeout {
                draws: stats.draws,
                rate: accepted / stats.draws as f64,
                floor: spec.min_acceptance,
            });
        }
    }

    let mut out = ent;
    out.append(&mut unent);
    if spec.mix.is_some() {
        // interleave deterministically so file order does not group classes
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_5eed);
        use rand::seq::SliceRandom;
        out.shuffle(&mut rng);
    }
    stats.accepted = out.len();
    stats.entangled_accepted = out.iter().filter(|r| r.is_entangled()).count();
    stats.acceptance_rate = stats.accepted as f64 / stats.draws.max(1) as f64;
    stats.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((out, stats))
}

/// Fraction of `n` random draws with lengths in `lengths` that are entangled.
pub fn entangled_fraction(
    vocab: &Vocabulary,
    lengths: std::ops::RangeInclusive<usize>,
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<f64, GenError> {
    let spec = GenSpec {
        min_len: *lengths.start(),
        max_len: *lengths.end(),
        seed,
        workers,
        ..GenSpec::default()
    };
    spec.validate(vocab)?;
    let pool = pool(workers)?;
    let (entangled, valid) = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| match draw(vocab, &spec, i) {
                Ok(r) => (r.is_entangled() as u64, 1u64),
                Err(_) => (0, 0),
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
    });
    Ok(entangled as f64 / valid.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_reproducible() {
        let v = Vocabulary::default();
        let a: Vec<Setup> = (0..20).map(|i| sample_setup(&mut draw_rng(7, i), &v)).collect();
        let b: Vec<Setup> = (0..20).map(|i| sample_setup(&mut draw_rng(7, i), &v)).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| (3..=12).contains(&s.len())));
    }

    #[test]
    fn worked_example_is_entangled() {
        let v = Vocabulary::default();
        let s = v
            .parse_setup("BS(b,c) OAMHolo(b,1) DownConv(c,d) Ref(c) OAMHolo(a,1)")
            .unwrap();
        let l = label(&s, &v.sim_config()).unwrap();
        assert!(l.is_entangled());
        assert_eq!(l.n_tp(), 2);
    }

    #[test]
    fn no_two_photon_devices_is_unentangled() {
        let v = Vocabulary::default();
        let s = v.parse_setup("Ref(a) Ref(b) Ref(c)").unwrap();
        let l = label(&s, &v.sim_config()).unwrap();
        assert_eq!(l.total(), 0.0);
        assert_eq!(l.summary.ranks, [1; 7]);
    }

    #[test]
    fn mixture_is_exact_and_deduplicated() {
        let v = Vocabulary::default();
        let spec = GenSpec {
            count: 200,
            mix: Some(0.5),
            seed: 3,
            ..GenSpec::default()
        };
        let (recs, stats) = generate_dataset(&v, &spec).unwrap();
        assert_eq!(recs.len(), 200);
        let ent = recs.iter().filter(|r| r.is_entangled()).count();
        assert_eq!(ent, 100);
        let unique: HashSet<_> = recs.iter().map(|r| r.setup.to_string()).collect();
        assert_eq!(unique.len(), 200);
        assert_eq!(stats.accepted, 200);
        assert!(stats.draws >= 200);
    }

    #[test]
    fn output_independent_of_workers() {
        let v = Vocabulary::default();
        let spec = GenSpec {
            count: 150,
            s_min: Some(0.0),
            ntp_min: 2,
            seed: 11,
            ..GenSpec::default()
        };
        let (a, sa) = generate_dataset(&v, &spec).unwrap();
        let (b, sb) = generate_dataset(&v, &GenSpec { workers: 3, ..spec.clone() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa.draws, sb.draws);
        assert!(a.iter().all(|r| r.is_entangled() && r.n_tp() >= 2));
    }

    #[test]
    fn s_window_is_strict() {
        let v = Vocabulary::default();
        let spec = GenSpec {
            count: 40,
            s_min: Some(2.0),
            s_max: Some(3.0),
            seed: 5,
            ..GenSpec::default()
        };
        let (recs, _) = generate_dataset(&v, &spec).unwrap();
        assert!(recs.iter().all(|r| r.total() > 2.0 && r.total() < 3.0));
    }

    #[test]
    fn impossible_filter_times_out() {
        let v = Vocabulary::default();
        let spec = GenSpec {
            count: 5,
            min_len: 3,
            max_len: 3,
            s_min: Some(50.0),
            patience: 2000,
            min_acceptance: 0.01,
            ..GenSpec::default()
        };
        assert!(matches!(
            generate_dataset(&v, &spec),
            Err(GenError::Timeout { .. })
        ));
        let capped = GenSpec {
            max_draws: Some(100),
            patience: u64::MAX,
            ..spec
        };
        assert!(matches!(
            generate_dataset(&v, &capped),
            Err(GenError::DrawLimit(100))
        ));
    }

    #[test]
    fn invalid_specs() {
        let v = Vocabulary::default();
        for spec in [
            GenSpec { min_len: 5, max_len: 4, ..GenSpec::default() },
            GenSpec { max_len: 13, ..GenSpec::default() },
            GenSpec { mix: Some(1.5), ..GenSpec::default() },
            GenSpec { s_min: Some(3.0), s_max: Some(2.0), ..GenSpec::default() },
        ] {
            assert!(matches!(generate_dataset(&v, &spec), Err(GenError::Spec(_))));
        }
    }
}
