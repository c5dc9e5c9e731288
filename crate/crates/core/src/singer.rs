//! Singer identity: registry with per-singer f0 statistics, the learned
//! N x S embedding table, and the inference-time f0 scale/shift that aligns
//! a source contour with a target singer's f0 distribution.

use std::fs;
use std::path::Path;

use ndarray::{Array1, ArrayView1, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{uniform_init, Param, ParamSlot, Parameterized};
use crate::pitch::{F0Contour, F0Stats};

/// One singer: dense id, display name, frozen f0 statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SingerProfile {
    pub id: usize,
    pub name: String,
    pub stats: F0Stats,
}

/// On-disk record in `singers.json`.
#[derive(Debug, Serialize, Deserialize)]
struct ProfileRecord {
    id: usize,
    name: String,
    mean_hz: f64,
    std_hz: f64,
    voiced_frames: usize,
}

/// Closed set of training singers with dense, unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SingerRegistry {
    profiles: Vec<SingerProfile>,
}

impl SingerRegistry {
    /// Build from profiles, enforcing dense unique ids `0..N`.
    pub fn new(mut profiles: Vec<SingerProfile>) -> Result<Self> {
        profiles.sort_by_key(|p| p.id);
        for (index, p) in profiles.iter().enumerate() {
            if index > 0 && profiles[index - 1].id == p.id {
                return Err(Error::DuplicateSingerId { id: p.id });
            }
            if p.id != index {
                return Err(Error::Config(format!(
                    "singer ids must be dense 0..N; found id {} at position {index}",
                    p.id
                )));
            }
        }
        Ok(SingerRegistry { profiles })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profiles(&self) -> &[SingerProfile] {
        &self.profiles
    }

    pub fn by_id(&self, id: usize) -> Result<&SingerProfile> {
        self.profiles.get(id).ok_or(Error::SingerOutOfRange {
            id,
            count: self.profiles.len(),
        })
    }

    /// Look up by name, falling back to a numeric id string.
    pub fn resolve(&self, key: &str) -> Result<&SingerProfile> {
        if let Some(p) = self.profiles.iter().find(|p| p.name == key) {
            return Ok(p);
        }
        if let Ok(id) = key.parse::<usize>() {
            if let Ok(p) = self.by_id(id) {
                return Ok(p);
            }
        }
        Err(Error::UnknownSinger {
            name: key.to_string(),
        })
    }

    /// Pooled f0 statistics across all singers, from the frozen per-singer
    /// moments. Used as the global quantizer normalization.
    pub fn pooled_stats(&self) -> Result<F0Stats> {
        let total: usize = self.profiles.iter().map(|p| p.stats.voiced_frames).sum();
        if total < 2 {
            return Err(Error::InsufficientVoicedFrames { found: total });
        }
        let n = total as f64;
        let mean = self
            .profiles
            .iter()
            .map(|p| p.stats.mean * p.stats.voiced_frames as f64)
            .sum::<f64>()
            / n;
        let second_moment = self
            .profiles
            .iter()
            .map(|p| {
                let m = p.stats.mean;
                let s = p.stats.std;
                (s * s + m * m) * p.stats.voiced_frames as f64
            })
            .sum::<f64>()
            / n;
        Ok(F0Stats {
            mean,
            std: (second_moment - mean * mean).max(0.0).sqrt(),
            voiced_frames: total,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let records: Vec<ProfileRecord> = self
            .profiles
            .iter()
            .map(|p| ProfileRecord {
                id: p.id,
                name: p.name.clone(),
                mean_hz: p.stats.mean,
                std_hz: p.stats.std,
                voiced_frames: p.stats.voiced_frames,
            })
            .collect();
        let json = serde_json::to_string_pretty(&records).expect("records serialize");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let records: Vec<ProfileRecord> =
            serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        let mut seen = std::collections::BTreeSet::new();
        for r in &records {
            if !seen.insert(r.id) {
                return Err(Error::DuplicateSingerId { id: r.id });
            }
        }
        SingerRegistry::new(
            records
                .into_iter()
                .map(|r| SingerProfile {
                    id: r.id,
                    name: r.name,
                    stats: F0Stats {
                        mean: r.mean_hz,
                        std: r.std_hz,
                        voiced_frames: r.voiced_frames,
                    },
                })
                .collect(),
        )
    }
}

/// Result of an f0 shift: the mapped contour plus how many voiced frames had
/// to be clamped back into the tracker range.
#[derive(Debug, Clone)]
pub struct ShiftOutcome {
    pub contour: F0Contour,
    pub clamped_frames: usize,
}

/// Scale/shift a contour from the source singer's f0 distribution to the
/// target's: `f -> (std_tgt / std_src) * (f - mean_src) + mean_tgt`.
///
/// Identical source and target stats return the contour unchanged
/// (bit-exact). Shifted values falling outside `range` are clamped and
/// counted; unvoiced frames pass through untouched.
pub fn shift_f0(
    c: &F0Contour,
    src: &F0Stats,
    tgt: &F0Stats,
    range: (f64, f64),
) -> Result<ShiftOutcome> {
    if src.std <= 0.0 {
        return Err(Error::ZeroStd);
    }
    if src.mean == tgt.mean && src.std == tgt.std {
        return Ok(ShiftOutcome {
            contour: c.clone(),
            clamped_frames: 0,
        });
    }
    let scale = tgt.std / src.std;
    let mut clamped = 0usize;
    let values = c
        .values
        .iter()
        .zip(&c.voiced)
        .map(|(&f, &v)| {
            if !v {
                return f;
            }
            let shifted = scale * (f - src.mean) + tgt.mean;
            if shifted < range.0 || shifted > range.1 {
                clamped += 1;
                shifted.clamp(range.0, range.1)
            } else {
                shifted
            }
        })
        .collect();
    Ok(ShiftOutcome {
        contour: F0Contour {
            values,
            voiced: c.voiced.clone(),
            frame_rate: c.frame_rate,
        },
        clamped_frames: clamped,
    })
}

/// Learned N x S singer embedding table.
#[derive(Debug, Clone)]
pub struct SingerEmbedding {
    pub table: Param<Ix2>,
}

impl SingerEmbedding {
    pub fn init(singers: usize, dim: usize, seed: u64) -> Self {
        assert!(singers >= 1 && dim >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SingerEmbedding {
            table: Param::new(uniform_init(Ix2(singers, dim), singers, &mut rng)),
        }
    }

    pub fn count(&self) -> usize {
        self.table.value.dim().0
    }

    pub fn dim(&self) -> usize {
        self.table.value.dim().1
    }

    pub fn embed(&self, id: usize) -> Result<ArrayView1<'_, f64>> {
        if id >= self.count() {
            return Err(Error::SingerOutOfRange {
                id,
                count: self.count(),
            });
        }
        Ok(self.table.value.row(id))
    }

    /// Accumulate the gradient flowing into one singer's row.
    pub fn backward(&mut self, id: usize, grad: &Array1<f64>) {
        let mut row = self.table.grad.row_mut(id);
        row += grad;
    }
}

impl Parameterized for SingerEmbedding {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        self.table.visit("singer.table", f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pitch::compute_stats;

    fn contour(values: Vec<f64>) -> F0Contour {
        let voiced = values.iter().map(|&v| v > 0.0).collect();
        F0Contour {
            values,
            voiced,
            frame_rate: 200.0,
        }
    }

    const RANGE: (f64, f64) = (50.0, 800.0);

    #[test]
    fn identity_shift_is_bit_exact() {
        let c = contour(vec![123.456789, 0.0, 678.9012345]);
        let s = F0Stats {
            mean: 200.0,
            std: 55.5,
            voiced_frames: 10,
        };
        let out = shift_f0(&c, &s, &s, RANGE).unwrap();
        assert_eq!(out.contour, c);
        assert_eq!(out.clamped_frames, 0);
    }

    #[test]
    fn hand_computed_shift() {
        let c = contour(vec![200.0]);
        let src = F0Stats {
            mean: 180.0,
            std: 30.0,
            voiced_frames: 10,
        };
        let tgt = F0Stats {
            mean: 240.0,
            std: 45.0,
            voiced_frames: 10,
        };
        let out = shift_f0(&c, &src, &tgt, RANGE).unwrap();
        assert_eq!(out.contour.values[0], 270.0);
    }

    #[test]
    fn equal_stds_reduce_to_translation() {
        let c = contour(vec![100.0, 150.0, 0.0, 210.0]);
        let src = F0Stats {
            mean: 150.0,
            std: 40.0,
            voiced_frames: 5,
        };
        let tgt = F0Stats {
            mean: 250.0,
            std: 40.0,
            voiced_frames: 5,
        };
        let out = shift_f0(&c, &src, &tgt, RANGE).unwrap();
        for (before, (after, &v)) in c
            .values
            .iter()
            .zip(out.contour.values.iter().zip(&c.voiced))
        {
            if v {
                assert!((after - (before + 100.0)).abs() < 1e-12);
            } else {
                assert_eq!(*after, *before);
            }
        }
    }

    #[test]
    fn moment_matching() {
        let c = contour(vec![110.0, 180.0, 0.0, 240.0, 160.0, 205.5, 131.25]);
        let src = compute_stats(std::slice::from_ref(&c)).unwrap();
        let tgt = F0Stats {
            mean: 300.0,
            std: 60.0,
            voiced_frames: 1,
        };
        let out = shift_f0(&c, &src, &tgt, RANGE).unwrap();
        assert_eq!(out.clamped_frames, 0);
        let shifted = compute_stats(&[out.contour]).unwrap();
        assert!((shifted.mean - tgt.mean).abs() / tgt.mean < 1e-9);
        assert!((shifted.std - tgt.std).abs() / tgt.std < 1e-9);
    }

    #[test]
    fn shift_composes_to_identity() {
        let c = contour(vec![140.0, 0.0, 200.0, 175.5]);
        let a = F0Stats {
            mean: 170.0,
            std: 25.0,
            voiced_frames: 3,
        };
        let b = F0Stats {
            mean: 260.0,
            std: 45.0,
            voiced_frames: 3,
        };
        let there = shift_f0(&c, &a, &b, RANGE).unwrap();
        assert_eq!(there.clamped_frames, 0);
        let back = shift_f0(&there.contour, &b, &a, RANGE).unwrap();
        for (x, y) in c.values.iter().zip(&back.contour.values) {
            assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
        }
        assert_eq!(back.contour.voiced, c.voiced);
    }

    #[test]
    fn clamping_is_counted() {
        let c = contour(vec![100.0, 700.0]);
        let src = F0Stats {
            mean: 150.0,
            std: 10.0,
            voiced_frames: 2,
        };
        let tgt = F0Stats {
            mean: 400.0,
            std: 100.0,
            voiced_frames: 2,
        };
        // 100 -> -100 (clamps to 50), 700 -> 5900 (clamps to 800).
        let out = shift_f0(&c, &src, &tgt, RANGE).unwrap();
        assert_eq!(out.clamped_frames, 2);
        assert_eq!(out.contour.values, vec![50.0, 800.0]);
    }

    #[test]
    fn zero_source_std_is_an_error() {
        let c = contour(vec![100.0]);
        let src = F0Stats {
            mean: 100.0,
            std: 0.0,
            voiced_frames: 2,
        };
        match shift_f0(&c, &src, &src, RANGE) {
            Err(Error::ZeroStd) => {}
            other => panic!("expected ZeroStd, got {other:?}"),
        }
    }

    #[test]
    fn embedding_rows_and_bounds() {
        let emb = SingerEmbedding::init(17, 8, 4);
        assert_eq!(emb.count(), 17);
        let row0 = emb.embed(0).unwrap().to_owned();
        assert_eq!(row0, emb.table.value.row(0).to_owned());
        assert!(emb.embed(16).is_ok());
        match emb.embed(17) {
            Err(Error::SingerOutOfRange { id: 17, count: 17 }) => {}
            other => panic!("expected SingerOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn registry_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("singers.json");
        let reg = SingerRegistry::new(vec![
            SingerProfile {
                id: 0,
                name: "alto".into(),
                stats: F0Stats {
                    mean: 220.123456789,
                    std: 35.98765432,
                    voiced_frames: 1234,
                },
            },
            SingerProfile {
                id: 1,
                name: "tenor".into(),
                stats: F0Stats {
                    mean: 130.5,
                    std: 20.25,
                    voiced_frames: 999,
                },
            },
            SingerProfile {
                id: 2,
                name: "soprano".into(),
                stats: F0Stats {
                    mean: 330.0,
                    std: 55.0,
                    voiced_frames: 777,
                },
            },
        ])
        .unwrap();
        reg.save(&path).unwrap();
        let loaded = SingerRegistry::load(&path).unwrap();
        assert_eq!(loaded, reg);
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("singers.json");
        std::fs::write(
            &path,
            r#"[{"id":0,"name":"a","mean_hz":200.0,"std_hz":30.0,"voiced_frames":10},
               {"id":0,"name":"b","mean_hz":210.0,"std_hz":31.0,"voiced_frames":11}]"#,
        )
        .unwrap();
        match SingerRegistry::load(&path) {
            Err(Error::DuplicateSingerId { id: 0 }) => {}
            other => panic!("expected DuplicateSingerId, got {other:?}"),
        }
    }

    #[test]
    fn empty_registry_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("singers.json");
        SingerRegistry::default().save(&path).unwrap();
        let loaded = SingerRegistry::load(&path).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn pooled_stats_match_direct_pooling() {
        let c1 = contour(vec![100.0, 200.0]);
        let c2 = contour(vec![300.0]);
        let s1 = compute_stats(std::slice::from_ref(&c1)).unwrap();
        let s2 = compute_stats(&[c1.clone(), c2.clone()]);
        // c2 alone has a single voiced frame, so pool it with zero std.
        let reg = SingerRegistry::new(vec![
            SingerProfile {
                id: 0,
                name: "a".into(),
                stats: s1,
            },
            SingerProfile {
                id: 1,
                name: "b".into(),
                stats: F0Stats {
                    mean: 300.0,
                    std: 0.0,
                    voiced_frames: 1,
                },
            },
        ])
        .unwrap();
        let pooled = reg.pooled_stats().unwrap();
        let direct = s2.unwrap();
        assert!((pooled.mean - direct.mean).abs() < 1e-12);
        assert!((pooled.std - direct.std).abs() < 1e-12);
        assert_eq!(pooled.voiced_frames, 3);
    }
}
