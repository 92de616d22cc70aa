//! Video manifests: the bitrate ladder and segment geometry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rung of the bitrate ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityLevel {
    pub bitrate_kbps: u32,
    /// Dimensionless quality score used by the session objective.
    pub quality_value: f64,
    /// Size of one segment at this level, in megabits (CBR assumption).
    pub segment_size_mbit: f64,
}

/// A video: ordered quality levels plus segment timing.
///
/// `num_segments == 0` means unbounded (looping) content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub segment_length_s: f64,
    pub num_segments: u32,
    pub levels: Vec<QualityLevel>,
}

impl VideoManifest {
    /// Validate ladder invariants, naming the offending field on failure.
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Manifest {
                field: "levels".into(),
                reason: "empty ladder".into(),
            });
        }
        if !(self.segment_length_s > 0.0) {
            return Err(Error::Manifest {
                field: "segment_length_s".into(),
                reason: format!("must be > 0, got {}", self.segment_length_s),
            });
        }
        for (i, level) in self.levels.iter().enumerate() {
            if !(level.segment_size_mbit > 0.0) {
                return Err(Error::Manifest {
                    field: format!("levels[{i}].segment_size_mbit"),
                    reason: format!("must be > 0, got {}", level.segment_size_mbit),
                });
            }
            if level.bitrate_kbps == 0 {
                return Err(Error::Manifest {
                    field: format!("levels[{i}].bitrate_kbps"),
                    reason: "must be > 0".into(),
                });
            }
        }
        for i in 1..self.levels.len() {
            if self.levels[i].bitrate_kbps <= self.levels[i - 1].bitrate_kbps {
                return Err(Error::Manifest {
                    field: format!("levels[{i}].bitrate_kbps"),
                    reason: "non-monotone ladder".into(),
                });
            }
            if self.levels[i].quality_value < self.levels[i - 1].quality_value {
                return Err(Error::Manifest {
                    field: format!("levels[{i}].quality_value"),
                    reason: "quality values must be non-decreasing".into(),
                });
            }
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Quality score of a ladder level.
    pub fn quality(&self, level: usize) -> Result<f64> {
        self.level(level).map(|l| l.quality_value)
    }

    pub fn level(&self, level: usize) -> Result<&QualityLevel> {
        self.levels.get(level).ok_or(Error::InvalidLevel {
            level,
            count: self.levels.len(),
        })
    }

    /// Highest bitrate on the ladder, in kbps.
    pub fn max_bitrate_kbps(&self) -> u32 {
        self.levels.last().map(|l| l.bitrate_kbps).unwrap_or(0)
    }

    pub fn max_quality_value(&self) -> f64 {
        self.levels
            .iter()
            .fold(f64::NEG_INFINITY, |a, l| a.max(l.quality_value))
    }

    /// Video duration in seconds, or `None` for unbounded content.
    pub fn duration_s(&self) -> Option<f64> {
        (self.num_segments > 0).then(|| self.num_segments as f64 * self.segment_length_s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: VideoManifest =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// A four-tier ladder (LD/SD/HD/FullHD-like) used by the shipped configs.
    ///
    /// Quality values are `level index + 1`.
    pub fn default_ladder(num_segments: u32) -> Self {
        let bitrates = [800u32, 1800, 3200, 5000];
        let segment_length_s = 1.0;
        let levels = bitrates
            .iter()
            .enumerate()
            .map(|(i, &b)| QualityLevel {
                bitrate_kbps: b,
                quality_value: (i + 1) as f64,
                segment_size_mbit: b as f64 * segment_length_s / 1000.0,
            })
            .collect();
        VideoManifest {
            segment_length_s,
            num_segments,
            levels,
        }
    }
}

/// Load and validate a manifest from its JSON file format.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<VideoManifest> {
    let text = std::fs::read_to_string(path)?;
    VideoManifest::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_level() -> VideoManifest {
        VideoManifest {
            segment_length_s: 1.0,
            num_segments: 10,
            levels: vec![
                QualityLevel {
                    bitrate_kbps: 1000,
                    quality_value: 1.0,
                    segment_size_mbit: 1.0,
                },
                QualityLevel {
                    bitrate_kbps: 2000,
                    quality_value: 2.0,
                    segment_size_mbit: 2.0,
                },
                QualityLevel {
                    bitrate_kbps: 4000,
                    quality_value: 3.0,
                    segment_size_mbit: 4.0,
                },
            ],
        }
    }

    #[test]
    fn round_trips_through_json() {
        let m = three_level();
        let parsed = VideoManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(parsed, m);
        assert_eq!(
            parsed
                .levels
                .iter()
                .map(|l| l.segment_size_mbit)
                .collect::<Vec<_>>(),
            vec![1.0, 2.0, 4.0]
        );
    }

    #[test]
    fn rejects_non_monotone_ladder() {
        let mut m = three_level();
        m.levels[1].bitrate_kbps = 500;
        let err = m.validate().unwrap_err();
        match err {
            Error::Manifest { field, reason } => {
                assert_eq!(field, "levels[1].bitrate_kbps");
                assert!(reason.contains("non-monotone"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_zero_segment_size() {
        let mut m = three_level();
        m.levels[0].segment_size_mbit = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn accepts_four_tier_ladder() {
        let m = VideoManifest::default_ladder(48);
        m.validate().unwrap();
        assert_eq!(m.num_levels(), 4);
        assert_eq!(m.max_bitrate_kbps(), 5000);
        assert_eq!(m.duration_s(), Some(48.0));
    }

    #[test]
    fn unbounded_video_has_no_duration() {
        let m = VideoManifest::default_ladder(0);
        assert_eq!(m.duration_s(), None);
    }
}
