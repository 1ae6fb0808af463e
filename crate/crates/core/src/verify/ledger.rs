//! The chain of bound constants, built from the estimated inputs
//! `(L, λ, ε, M₁, M₂)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("ledger input {name} = {value} must be positive and finite")]
    NonpositiveInput { name: &'static str, value: f64 },
    #[error("unknown ledger constant '{0}'")]
    UnknownKey(String),
}

/// Upper-case fields are the global constants, lower-case (`small_*`) the
/// refined ones carrying the `e^{-1/t}` factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantLedger {
    pub l: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub m1: f64,
    pub m2: f64,
    #[serde(rename = "C1")]
    pub big_c1: f64,
    #[serde(rename = "c1")]
    pub small_c1: f64,
    #[serde(rename = "C2")]
    pub big_c2: f64,
    #[serde(rename = "c2")]
    pub small_c2: f64,
    #[serde(rename = "C3")]
    pub big_c3: f64,
    #[serde(rename = "c3")]
    pub small_c3: f64,
    #[serde(rename = "C4")]
    pub big_c4: f64,
    #[serde(rename = "c4")]
    pub small_c4: f64,
    #[serde(rename = "C5")]
    pub big_c5: f64,
    #[serde(rename = "C6")]
    pub big_c6: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
}

pub const LEDGER_KEYS: [&str; 13] = ["C1", "c1", "C2", "c2", "C3", "c3", "C4", "c4", "C5", "C6", "C", "L", "lambda"];

pub fn build_ledger(l: f64, lambda: f64, epsilon: f64, m1: f64, m2: f64) -> Result<ConstantLedger, LedgerError> {
    for (name, value) in [("L", l), ("lambda", lambda), ("epsilon", epsilon), ("M1", m1), ("M2", m2)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(LedgerError::NonpositiveInput { name, value });
        }
    }
    let l2 = l * l;
    let big_c1 = 2.0 * (1.0 + 1.0 / l2);
    let small_c1 = 2.0 * (m1 + m2) * std::f64::consts::E * epsilon / l;
    let big_c2 = 0.5 * big_c1 / (l2 * l2);
    let small_c2 = 0.5 * small_c1 / (l2 * l2);
    let big_c3 = big_c1 + big_c2;
    let small_c3 = small_c1 + small_c2;
    let big_c4 = 2.0 * big_c3 * lambda / l2;
    let small_c4 = 2.0 * small_c3 * lambda / l2;
    let big_c5 = 2.0 * big_c4 + small_c4;
    let big_c6 = big_c3 + 3.0 * big_c5;
    Ok(ConstantLedger {
        l,
        lambda,
        epsilon,
        m1,
        m2,
        big_c1,
        small_c1,
        big_c2,
        small_c2,
        big_c3,
        small_c3,
        big_c4,
        small_c4,
        big_c5,
        big_c6,
        big_c: 2.0 * big_c6,
    })
}

impl ConstantLedger {
    /// Rebuild from the stored inputs.
    pub fn rebuild(&self) -> Result<ConstantLedger, LedgerError> {
        build_ledger(self.l, self.lambda, self.epsilon, self.m1, self.m2)
    }

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "C1" => &mut self.big_c1,
            "c1" => &mut self.small_c1,
            "C2" => &mut self.big_c2,
            "c2" => &mut self.small_c2,
            "C3" => &mut self.big_c3,
            "c3" => &mut self.small_c3,
            "C4" => &mut self.big_c4,
            "c4" => &mut self.small_c4,
            "C5" => &mut self.big_c5,
            "C6" => &mut self.big_c6,
            "C" => &mut self.big_c,
            "L" => &mut self.l,
            "lambda" => &mut self.lambda,
            _ => return None,
        })
    }

    pub fn get(&self, key: &str) -> Result<f64, LedgerError> {
        let mut copy = *self;
        copy.slot(key).map(|v| *v).ok_or_else(|| LedgerError::UnknownKey(key.to_string()))
    }

    /// Multiply one stored constant by `factor` without touching the rest of
    /// the chain (used to test that the bound checks can fail).
    pub fn corrupt(&mut self, key: &str, factor: f64) -> Result<(), LedgerError> {
        let slot = self.slot(key).ok_or_else(|| LedgerError::UnknownKey(key.to_string()))?;
        *slot *= factor;
        Ok(())
    }

    /// Every constant multiplied by `factor`; inputs unchanged.
    pub fn inflated(&self, factor: f64) -> ConstantLedger {
        let mut out = *self;
        for key in &LEDGER_KEYS[..11] {
            out.corrupt(key, factor).expect("known key");
        }
        out
    }
}
