//! The seven-way label scheme: background plus six affordances.

use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 7;

/// Number of keypoints attached to every affordance instance.
pub const NUM_KEYPOINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Affordance {
    Background = 0,
    Grasp = 1,
    Cut = 2,
    Scoop = 3,
    Contain = 4,
    Pound = 5,
    WrapGrasp = 6,
}

impl Affordance {
    /// The six foreground affordances in label order.
    pub const FOREGROUND: [Affordance; 6] = [
        Affordance::Grasp,
        Affordance::Cut,
        Affordance::Scoop,
        Affordance::Contain,
        Affordance::Pound,
        Affordance::WrapGrasp,
    ];

    pub fn from_label(label: u8) -> Option<Affordance> {
        use Affordance::*;
        Some(match label {
            0 => Background,
            1 => Grasp,
            2 => Cut,
            3 => Scoop,
            4 => Contain,
            5 => Pound,
            6 => WrapGrasp,
            _ => return None,
        })
    }

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Affordance::Background => "background",
            Affordance::Grasp => "grasp",
            Affordance::Cut => "cut",
            Affordance::Scoop => "scoop",
            Affordance::Contain => "contain",
            Affordance::Pound => "pound",
            Affordance::WrapGrasp => "w-grasp",
        }
    }

    pub fn is_foreground(self) -> bool {
        self != Affordance::Background
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for l in 0..NUM_CLASSES as u8 {
            assert_eq!(Affordance::from_label(l).unwrap().label(), l);
        }
        assert_eq!(Affordance::from_label(7), None);
    }
}
