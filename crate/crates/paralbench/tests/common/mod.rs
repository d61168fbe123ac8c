//! Shared helpers for integration tests.
//!
//! The classification-metric oracle here is deliberately independent of the
//! library implementation: it never builds a confusion matrix and counts
//! everything with direct scans over the label vectors, so agreement with
//! the library is meaningful evidence rather than a tautology.

#![allow(dead_code)]

/// Metrics computed by the brute-force reference path.
#[derive(Debug, Clone, Copy)]
pub struct OracleClassification {
    pub wa: f64,
    pub ua: f64,
    pub wf1: f64,
    /// Number of declared classes with zero test support (excluded from UA).
    pub excluded_classes: usize,
}

/// Brute-force classification metrics from raw label vectors.
///
/// All per-class tallies are independent scans; division-by-zero corners
/// follow the documented conventions (empty classes excluded from the UA
/// average, precision/recall/F1 of 0/0 treated as 0).
pub fn oracle_classification(y_true: &[usize], y_pred: &[usize], c: usize) -> OracleClassification {
    assert_eq!(y_true.len(), y_pred.len());
    assert!(!y_true.is_empty());
    assert!(y_true.iter().chain(y_pred.iter()).all(|&l| l < c));
    let n = y_true.len() as f64;

    let correct = y_true
        .iter()
        .zip(y_pred.iter())
        .filter(|(t, p)| t == p)
        .count();
    let wa = correct as f64 / n;

    let mut class_accuracies = Vec::new();
    let mut excluded = 0usize;
    let mut wf1_weighted_sum = 0.0f64;
    for class in 0..c {
        let support = y_true.iter().filter(|&&t| t == class).count();
        let tp = y_true
            .iter()
            .zip(y_pred.iter())
            .filter(|(&t, &p)| t == class && p == class)
            .count();
        let fp = y_true
            .iter()
            .zip(y_pred.iter())
            .filter(|(&t, &p)| t != class && p == class)
            .count();
        if support == 0 {
            excluded += 1;
        } else {
            class_accuracies.push(tp as f64 / support as f64);
        }
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if support == 0 {
            0.0
        } else {
            tp as f64 / support as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        wf1_weighted_sum += support as f64 * f1;
    }
    let ua = class_accuracies.iter().sum::<f64>() / class_accuracies.len() as f64;
    let wf1 = wf1_weighted_sum / n;

    OracleClassification {
        wa,
        ua,
        wf1,
        excluded_classes: excluded,
    }
}

/// Mean absolute error computed with a right-to-left accumulation order so
/// its rounding path differs from a straightforward left-to-right sum.
pub fn oracle_mae(y_true: &[f64], y_pred: &[f64]) -> f64 {
    assert_eq!(y_true.len(), y_pred.len());
    assert!(!y_true.is_empty());
    let sum: f64 = y_true
        .iter()
        .zip(y_pred.iter())
        .rev()
        .map(|(t, p)| (t - p).abs())
        .sum();
    sum / y_true.len() as f64
}

/// Exact rational number over `i128`, sufficient for count-scale arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: i128,
    pub den: i128,
}

impl Rational {
    pub fn new(num: i128, den: i128) -> Self {
        assert!(den != 0);
        let g = gcd(num.abs().max(1), den.abs());
        let sign = if den < 0 { -1 } else { 1 };
        Rational {
            num: sign * num / g,
            den: sign * den / g,
        }
    }

    pub fn zero() -> Self {
        Rational { num: 0, den: 1 }
    }

    pub fn add(self, other: Rational) -> Rational {
        Rational::new(
            self.num * other.den + other.num * self.den,
            self.den * other.den,
        )
    }

    pub fn mul(self, other: Rational) -> Rational {
        Rational::new(self.num * other.num, self.den * other.den)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

/// Weighted-accuracy in its weighted-average form, evaluated in exact
/// rational arithmetic: sum_c N_c * Acc(c) / sum_c N_c.
///
/// Used to check that the trace/N shortcut is an *exact* reduction of the
/// weighted form, not merely a close one.
pub fn oracle_wa_weighted_exact(y_true: &[usize], y_pred: &[usize], c: usize) -> f64 {
    let mut weighted_sum = Rational::zero();
    let mut total_support = 0i128;
    for class in 0..c {
        let support = y_true.iter().filter(|&&t| t == class).count() as i128;
        if support == 0 {
            continue;
        }
        let correct = y_true
            .iter()
            .zip(y_pred.iter())
            .filter(|(&t, &p)| t == class && p == class)
            .count() as i128;
        let acc = Rational::new(correct, support);
        weighted_sum = weighted_sum.add(Rational::new(support, 1).mul(acc));
        total_support += support;
    }
    weighted_sum.mul(Rational::new(1, total_support)).to_f64()
}

/// Deterministic pseudo-random label vectors for oracle comparison sweeps.
/// A tiny xorshift keeps the test free of any RNG the library itself uses.
pub struct XorShift64(pub u64);

impl XorShift64 {
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn below(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }

    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}
