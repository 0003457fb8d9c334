//! Extended reals as tagged values.

use serde::{Serialize, Serializer};

/// A real number or one of the two infinities. There are deliberately no
/// arithmetic impls: callers must handle the flags explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended {
    Finite(f64),
    PosInf,
    NegInf,
}

impl Extended {
    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn flag(self) -> &'static str {
        match self {
            Extended::Finite(_) => "finite",
            Extended::PosInf => "+inf",
            Extended::NegInf => "-inf",
        }
    }

    /// Total order with −∞ < finite < +∞.
    pub fn max(self, other: Extended) -> Extended {
        use Extended::*;
        match (self, other) {
            (PosInf, _) | (_, PosInf) => PosInf,
            (NegInf, x) | (x, NegInf) => x,
            (Finite(a), Finite(b)) => Finite(a.max(b)),
        }
    }

    pub fn unwrap_finite(self) -> f64 {
        self.finite()
            .unwrap_or_else(|| panic!("expected a finite value, got {}", self.flag()))
    }
}

impl From<f64> for Extended {
    fn from(v: f64) -> Self {
        Extended::Finite(v)
    }
}

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Extended", 2)?;
        st.serialize_field("value", &self.finite())?;
        st.serialize_field("flag", self.flag())?;
        st.end()
    }
}
