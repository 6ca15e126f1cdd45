//! The tomographic protocol: five mutually unbiased bases in dimension four.
//!
//! Basis 0 is the computational basis in HG order (HG00, HG01, HG10, HG11).
//! Bases 1..=4 are built over GF(4): for each field element `a` the symmetric
//! bilinear form `B_a(x, y) = tr(a x y)` is lifted to a Z4-valued quadratic
//! form `Q_a`, and element `b` of basis `a` has amplitudes
//!
//! ```text
//! v[x] = i^Q_a(x) * (-1)^tr(b x) / 2
//! ```
//!
//! where the component index `x` is read as a GF(4) element (bit 0 = 1, bit 1 = α).
//! `a = 0` gives the real Hadamard-type basis.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::qlin::PureState;

pub const DIM: usize = 4;
pub const NUM_BASES: usize = DIM + 1;
pub const NUM_ELEMENTS: usize = DIM * NUM_BASES;
pub const MUB_TOL: f64 = 1e-10;

pub mod gf4 {
    //! Arithmetic in GF(4) = {0, 1, α, α²} with α² = α + 1.
    //!
    //! Elements are stored as two bits: `0b01` is 1, `0b10` is α, `0b11` is α².

    use std::ops::{Add, Mul};

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct Gf4(u8);

    impl Gf4 {
        pub const ZERO: Self = Self(0);
        pub const ONE: Self = Self(1);
        pub const ALPHA: Self = Self(2);
        pub const ALPHA_SQ: Self = Self(3);

        pub const ALL: [Self; 4] = [Self::ZERO, Self::ONE, Self::ALPHA, Self::ALPHA_SQ];

        pub const fn new(bits: u8) -> Self {
            Self(bits & 0b11)
        }

        pub const fn bits(self) -> u8 {
            self.0
        }

        /// Absolute trace `x + x²` onto GF(2); equals the α coefficient.
        pub const fn trace(self) -> u8 {
            (self.0 >> 1) & 1
        }
    }

    impl Add for Gf4 {
        type Output = Self;
        fn add(self, rhs: Self) -> Self {
            Self(self.0 ^ rhs.0)
        }
    }

    impl Mul for Gf4 {
        type Output = Self;
        fn mul(self, rhs: Self) -> Self {
            // carry-less product reduced by α² + α + 1
            let mut r = 0u8;
            for i in 0..2 {
                if (rhs.0 >> i) & 1 == 1 {
                    r ^= self.0 << i;
                }
            }
            if r & 0b100 != 0 {
                r ^= 0b111;
            }
            Self(r)
        }
    }

}

use gf4::Gf4;

/// An ordered set of mutually unbiased bases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MubSet {
    bases: Vec<Vec<PureState>>,
}

impl MubSet {
    /// Wraps arbitrary bases without checking them; see [`verify_mub`].
    pub fn from_bases(bases: Vec<Vec<PureState>>) -> Self {
        Self { bases }
    }

    pub fn bases(&self) -> &[Vec<PureState>] {
        &self.bases
    }

    /// Flat, basis-major list of all elements.
    pub fn elements(&self) -> Vec<PureState> {
        self.bases.iter().flatten().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.bases.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element by zero-based flat index `basis * 4 + element`.
    pub fn get(&self, flat: usize) -> Option<&PureState> {
        self.bases.iter().flatten().nth(flat)
    }

    /// (basis, element) of a zero-based flat index.
    pub fn split_index(flat: usize) -> (usize, usize) {
        (flat / DIM, flat % DIM)
    }
}

fn quadratic_form(a: Gf4, x: Gf4) -> u8 {
    let e = [Gf4::ONE, Gf4::ALPHA];
    let bits = [x.bits() & 1, (x.bits() >> 1) & 1];
    let form = |u: Gf4, v: Gf4| (a * u * v).trace();
    let diag = form(e[0], e[0]) * bits[0] + form(e[1], e[1]) * bits[1];
    let cross = 2 * form(e[0], e[1]) * bits[0] * bits[1];
    (diag + cross) % 4
}

fn i_pow(k: u8) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// The complete set of five MUBs in dimension four.
pub fn build_mub_d4() -> MubSet {
    let mut bases = Vec::with_capacity(NUM_BASES);
    bases.push(
        (0..DIM)
            .map(|k| PureState::basis(DIM, k).expect("valid basis index"))
            .collect(),
    );
    for a in Gf4::ALL {
        let basis = Gf4::ALL
            .iter()
            .map(|&b| {
                let amps = Gf4::ALL
                    .iter()
                    .map(|&x| {
                        let sign = if (b * x).trace() == 1 { -0.5 } else { 0.5 };
                        i_pow(quadratic_form(a, x)) * sign
                    })
                    .collect();
                PureState::new(amps).expect("entries have modulus 1/2")
            })
            .collect();
        bases.push(basis);
    }
    MubSet { bases }
}

/// Worst-case deviations of a candidate MUB set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MubReport {
    /// max | |<a|b>| - δ_ab | within each basis
    pub orthonormality_error: f64,
    /// max | |<a|b>|² - 1/d | across distinct bases
    pub unbiasedness_error: f64,
}

impl MubReport {
    pub fn is_accepted(&self) -> bool {
        self.orthonormality_error < MUB_TOL && self.unbiasedness_error < MUB_TOL
    }
}

pub fn verify_mub(set: &MubSet) -> MubReport {
    let mut ortho: f64 = 0.0;
    let mut unbiased: f64 = 0.0;
    for (p, bp) in set.bases.iter().enumerate() {
        let d = bp.first().map(PureState::dim).unwrap_or(DIM) as f64;
        for (q, bq) in set.bases.iter().enumerate() {
            for (i, u) in bp.iter().enumerate() {
                for (j, v) in bq.iter().enumerate() {
                    let overlap = u.inner(v).map(|z| z.norm()).unwrap_or(f64::INFINITY);
                    if p == q {
                        let target = if i == j { 1.0 } else { 0.0 };
                        ortho = ortho.max((overlap - target).abs());
                    } else {
                        unbiased = unbiased.max((overlap * overlap - 1.0 / d).abs());
                    }
                }
            }
        }
    }
    MubReport {
        orthonormality_error: ortho,
        unbiasedness_error: unbiased,
    }
}

/// Ideal probability matrix `P_ij = |<Φ_j|Φ_i>|²` (rows: inputs, columns: projectors).
pub fn ideal_probabilities(set: &MubSet) -> Result<Vec<Vec<f64>>> {
    let elems = set.elements();
    elems
        .iter()
        .map(|phi_i| {
            elems
                .iter()
                .map(|phi_j| phi_j.inner(phi_i).map(|z| z.norm_sqr()))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Checks a flat index against the 20-element layout.
pub fn check_flat_index(flat: usize) -> Result<()> {
    if flat >= NUM_ELEMENTS {
        return Err(Error::DimensionMismatch {
            expected: NUM_ELEMENTS,
            found: flat + 1,
        });
    }
    Ok(())
}
