use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical quantities with a non-dimensional scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    /// Temperature, 7.5 °C.
    T,
    /// Thermocline depth, 150 m.
    H,
    /// Zonal current, 1.5 m/s.
    U,
    /// Wind, 5 m/s.
    Tau,
    /// Time, 2 months.
    Time,
}

impl Quantity {
    pub fn scale(self) -> f64 {
        match self {
            Quantity::T => 7.5,
            Quantity::H => 150.0,
            Quantity::U => 1.5,
            Quantity::Tau => 5.0,
            Quantity::Time => 2.0,
        }
    }
}

impl FromStr for Quantity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "temperature" => Ok(Quantity::T),
            "h" | "depth" => Ok(Quantity::H),
            "u" | "current" => Ok(Quantity::U),
            "tau" | "wind" => Ok(Quantity::Tau),
            "t" | "time" => Ok(Quantity::Time),
            _ => Err(Error::UnknownQuantity(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToNondim,
    ToPhysical,
}

pub fn convert_units(value: f64, quantity: Quantity, direction: Direction) -> f64 {
    match direction {
        Direction::ToNondim => value / quantity.scale(),
        Direction::ToPhysical => value * quantity.scale(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_degree_is_one_fifteenth() {
        let v = convert_units(0.5, Quantity::T, Direction::ToNondim);
        assert!((v - 0.0667).abs() < 1e-4);
    }

    #[test]
    fn six_units_is_a_year() {
        assert_eq!(convert_units(6.0, Quantity::Time, Direction::ToPhysical), 12.0);
    }

    #[test]
    fn zero_maps_to_zero() {
        for q in [Quantity::T, Quantity::H, Quantity::U, Quantity::Tau, Quantity::Time] {
            assert_eq!(convert_units(0.0, q, Direction::ToNondim), 0.0);
            assert_eq!(convert_units(0.0, q, Direction::ToPhysical), 0.0);
        }
        assert!("salinity".parse::<Quantity>().is_err());
    }
}
