//! Tunable objective parameters for the ABR algorithms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The objective vector a tuner is allowed to adjust at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum QoeParams {
    /// Lookahead objective weights: stall penalty and switch penalty.
    Mpc {
        stall_weight: f64,
        switch_weight: f64,
    },
    /// Aggressiveness of the throughput+buffer rule.
    Hyb { beta: f64 },
}

impl QoeParams {
    pub fn validate(&self) -> Result<()> {
        match *self {
            QoeParams::Mpc {
                stall_weight,
                switch_weight,
            } => {
                if !(1.0..=20.0).contains(&stall_weight) {
                    return Err(Error::InvalidParam(format!(
                        "stall_weight {stall_weight} outside [1, 20]"
                    )));
                }
                if !(0.0..=4.0).contains(&switch_weight) {
                    return Err(Error::InvalidParam(format!(
                        "switch_weight {switch_weight} outside [0, 4]"
                    )));
                }
            }
            QoeParams::Hyb { beta } => {
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::InvalidParam(format!("beta {beta} outside (0, 1]")));
                }
            }
        }
        Ok(())
    }

    /// The stall-aversion knob as a scalar for reporting: stall weight for
    /// the lookahead objective, beta for the throughput+buffer rule.
    pub fn stall_knob(&self) -> f64 {
        match *self {
            QoeParams::Mpc { stall_weight, .. } => stall_weight,
            QoeParams::Hyb { beta } => beta,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: QoeParams =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("params: {e}")))?;
        p.validate()?;
        Ok(p)
    }
}

/// Axis-aligned search box over a parameter variant, used by the tuner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ParamBox {
    Mpc {
        stall_weight: (f64, f64),
        switch_weight: (f64, f64),
    },
    Hyb {
        beta: (f64, f64),
    },
}

impl ParamBox {
    /// The full box from the shipped defaults for each variant.
    pub fn default_mpc() -> Self {
        ParamBox::Mpc {
            stall_weight: (1.0, 20.0),
            switch_weight: (0.0, 4.0),
        }
    }

    pub fn default_hyb() -> Self {
        ParamBox::Hyb { beta: (0.1, 1.0) }
    }

    pub fn dims(&self) -> usize {
        match self {
            ParamBox::Mpc { .. } => 2,
            ParamBox::Hyb { .. } => 1,
        }
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match *self {
            ParamBox::Mpc {
                stall_weight,
                switch_weight,
            } => vec![stall_weight, switch_weight],
            ParamBox::Hyb { beta } => vec![beta],
        }
    }

    /// Map a point in the box (natural units) to parameters.
    pub fn params_from(&self, x: &[f64]) -> QoeParams {
        match self {
            ParamBox::Mpc { .. } => QoeParams::Mpc {
                stall_weight: x[0],
                switch_weight: x[1],
            },
            ParamBox::Hyb { .. } => QoeParams::Hyb { beta: x[0] },
        }
    }

    /// Project parameters onto the box coordinates (natural units).
    pub fn vector_of(&self, p: &QoeParams) -> Vec<f64> {
        match (self, p) {
            (
                ParamBox::Mpc { .. },
                QoeParams::Mpc {
                    stall_weight,
                    switch_weight,
                },
            ) => vec![*stall_weight, *switch_weight],
            (ParamBox::Hyb { .. }, QoeParams::Hyb { beta }) => vec![*beta],
            _ => panic!("parameter variant does not match the search box"),
        }
    }

    /// Comparator used for acquisition tie-breaking: prefer the lower
    /// stall-risk point (higher stall weight, or lower beta).
    pub fn more_conservative(&self, a: &[f64], b: &[f64]) -> bool {
        match self {
            ParamBox::Mpc { .. } => a[0] > b[0] || (a[0] == b[0] && a[1] < b[1]),
            ParamBox::Hyb { .. } => a[0] < b[0],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_ranges() {
        assert!(QoeParams::Mpc {
            stall_weight: 4.0,
            switch_weight: 1.0
        }
        .validate()
        .is_ok());
        assert!(QoeParams::Mpc {
            stall_weight: 0.5,
            switch_weight: 1.0
        }
        .validate()
        .is_err());
        assert!(QoeParams::Hyb { beta: 0.0 }.validate().is_err());
        assert!(QoeParams::Hyb { beta: 1.0 }.validate().is_ok());
    }

    #[test]
    fn json_round_trip() {
        let p = QoeParams::Hyb { beta: 0.6 };
        assert_eq!(QoeParams::from_json(&p.to_json()).unwrap(), p);
        let p = QoeParams::Mpc {
            stall_weight: 8.0,
            switch_weight: 1.5,
        };
        assert_eq!(QoeParams::from_json(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn box_vector_round_trip() {
        let b = ParamBox::default_mpc();
        let p = QoeParams::Mpc {
            stall_weight: 11.0,
            switch_weight: 2.0,
        };
        assert_eq!(b.params_from(&b.vector_of(&p)), p);
    }
}
