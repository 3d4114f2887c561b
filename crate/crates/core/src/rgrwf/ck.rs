//! Triangular binary field with a nonlocal but directionless update rule:
//! row T holds T sites, each site and its two future neighbours sum to 0 or 2,
//! and one fair coin per row fixes the row.

use rand::Rng;

use crate::error::{Error, Result};

/// Which site of a new row the coin decides; the rest follow from the triples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    LeftFirst,
    RightFirst,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CkField {
    /// rows[T − 1] holds the T values of row T.
    pub rows: Vec<Vec<u8>>,
}

impl CkField {
    pub fn t_max(&self) -> usize {
        self.rows.len()
    }

    /// Whether φ(T, j) + φ(T+1, j) + φ(T+1, j+1) ∈ {0, 2} everywhere.
    pub fn satisfies_triples(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| (0..w[0].len()).all(|j| matches!(w[0][j] + w[1][j] + w[1][j + 1], 0 | 2)))
    }

    /// Row-major bit string.
    pub fn code(&self) -> u64 {
        self.rows
            .iter()
            .flatten()
            .fold(0u64, |acc, &b| (acc << 1) | u64::from(b))
    }

    pub fn sites(t_max: usize) -> usize {
        t_max * (t_max + 1) / 2
    }
}

pub fn ck_lattice_simulate<R: Rng + ?Sized>(
    t_max: usize,
    order: Order,
    rng: &mut R,
) -> Result<CkField> {
    if t_max == 0 {
        return Err(Error::InvalidParameter("T_max must be at least 1".into()));
    }
    if CkField::sites(t_max) > 64 {
        return Err(Error::InvalidParameter(
            "T_max above 10 does not fit the field code".into(),
        ));
    }
    let mut rows: Vec<Vec<u8>> = vec![vec![u8::from(rng.random::<bool>())]];
    for t in 1..t_max {
        let prev = &rows[t - 1];
        let mut row = vec![0u8; t + 1];
        let coin = u8::from(rng.random::<bool>());
        match order {
            Order::LeftFirst => {
                row[0] = coin;
                for j in 0..t {
                    row[j + 1] = prev[j] ^ row[j];
                }
            }
            Order::RightFirst => {
                row[t] = coin;
                for j in (0..t).rev() {
                    row[j] = prev[j] ^ row[j + 1];
                }
            }
        }
        rows.push(row);
    }
    Ok(CkField { rows })
}

/// Distribution over field codes implied by the two laws, from brute-force
/// enumeration of every assignment: the consistent fields are equally likely.
pub fn enumerate_distribution(t_max: usize) -> Result<Vec<(u64, f64)>> {
    let n = CkField::sites(t_max);
    if t_max == 0 || n > 24 {
        return Err(Error::InvalidParameter(
            "enumeration supports 1 ≤ T_max ≤ 6".into(),
        ));
    }
    let mut consistent = Vec::new();
    for code in 0u64..(1 << n) {
        let mut rows = Vec::with_capacity(t_max);
        let mut bit = n;
        for t in 1..=t_max {
            rows.push(
                (0..t)
                    .map(|_| {
                        bit -= 1;
                        ((code >> bit) & 1) as u8
                    })
                    .collect(),
            );
        }
        if (CkField { rows }).satisfies_triples() {
            consistent.push(code);
        }
    }
    let p = 1.0 / consistent.len() as f64;
    Ok(consistent.into_iter().map(|c| (c, p)).collect())
}
