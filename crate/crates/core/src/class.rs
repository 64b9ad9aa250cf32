use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Highway vehicle categories: car, car with trailer, truck, cargo truck,
/// bus and motorcycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    A,
    B,
    C,
    D,
    E,
    G,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 6] = [
        VehicleClass::A,
        VehicleClass::B,
        VehicleClass::C,
        VehicleClass::D,
        VehicleClass::E,
        VehicleClass::G,
    ];

    pub const COUNT: usize = 6;

    /// Position in `ALL`, also the output neuron of the classifier.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn letter(self) -> char {
        match self {
            VehicleClass::A => 'A',
            VehicleClass::B => 'B',
            VehicleClass::C => 'C',
            VehicleClass::D => 'D',
            VehicleClass::E => 'E',
            VehicleClass::G => 'G',
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            VehicleClass::A => "car",
            VehicleClass::B => "car-trailer",
            VehicleClass::C => "truck",
            VehicleClass::D => "cargo truck",
            VehicleClass::E => "bus",
            VehicleClass::G => "motorcycle",
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for VehicleClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(VehicleClass::A),
            "B" | "b" => Ok(VehicleClass::B),
            "C" | "c" => Ok(VehicleClass::C),
            "D" | "d" => Ok(VehicleClass::D),
            "E" | "e" => Ok(VehicleClass::E),
            "G" | "g" => Ok(VehicleClass::G),
            other => Err(Error::UnknownClass(other.to_string())),
        }
    }
}
