//! Exact stabilizer enumeration in the binary symplectic picture.
//!
//! A stabilizer `S_l = prod_i g_i^{l_i}` of a graph state has X-part `l` and
//! Z-part `A l` (mod 2), where `A` is the adjacency matrix. Signs are not
//! tracked: the fidelity only depends on which Pauli letters appear.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numeric::{log_sum_exp, xlogy};

/// Default largest `n` for which the `2^n` enumeration is attempted.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Hard ceiling on the cap: masks are single `u64` words.
pub const MAX_ENUMERATION_CAP: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    #[inline]
    pub fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        };
        write!(f, "{c}")
    }
}

/// Unsigned Pauli string stored as packed x/z bit vectors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    n: usize,
    xbits: Vec<u64>,
    zbits: Vec<u64>,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        let words = n.div_ceil(64);
        Self {
            n,
            xbits: vec![0; words],
            zbits: vec![0; words],
        }
    }

    pub fn from_ops(ops: &[Pauli]) -> Self {
        let mut ps = Self::identity(ops.len());
        for (i, op) in ops.iter().enumerate() {
            let (x, z) = match op {
                Pauli::I => (false, false),
                Pauli::X => (true, false),
                Pauli::Y => (true, true),
                Pauli::Z => (false, true),
            };
            if x {
                ps.flip_x(i);
            }
            if z {
                ps.flip_z(i);
            }
        }
        ps
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn x(&self, i: usize) -> bool {
        self.xbits[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn z(&self, i: usize) -> bool {
        self.zbits[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    fn flip_x(&mut self, i: usize) {
        self.xbits[i / 64] ^= 1 << (i % 64);
    }

    #[inline]
    fn flip_z(&mut self, i: usize) {
        self.zbits[i / 64] ^= 1 << (i % 64);
    }

    pub fn op(&self, i: usize) -> Pauli {
        Pauli::from_bits(self.x(i), self.z(i))
    }

    pub fn ops(&self) -> Vec<Pauli> {
        (0..self.n).map(|i| self.op(i)).collect()
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            write!(f, "{}", self.op(i))?;
        }
        Ok(())
    }
}

/// Numbers of X, Y and Z letters in a Pauli string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct WeightTriple {
    pub mx: usize,
    pub my: usize,
    pub mz: usize,
}

impl WeightTriple {
    pub const fn new(mx: usize, my: usize, mz: usize) -> Self {
        Self { mx, my, mz }
    }

    pub fn total(&self) -> usize {
        self.mx + self.my + self.mz
    }
}

/// IID single-qubit Pauli channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    px: f64,
    py: f64,
    pz: f64,
}

impl NoiseModel {
    pub fn new(px: f64, py: f64, pz: f64) -> Result<Self> {
        for (name, v) in [("px", px), ("py", py), ("pz", pz)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Noise(format!("{name} must be a finite probability >= 0 (got {v})")));
            }
        }
        let p = px + py + pz;
        if p > 1.0 + 1e-15 {
            return Err(Error::Noise(format!("px + py + pz must not exceed 1 (got {p})")));
        }
        Ok(Self { px, py, pz })
    }

    /// Depolarizing channel `px = py = pz = p/3`, `0 <= p <= 3/4`.
    pub fn depolarizing(p: f64) -> Result<Self> {
        if !(0.0..=0.75).contains(&p) {
            return Err(Error::Noise(format!("depolarizing p must lie in [0, 3/4] (got {p})")));
        }
        Self::new(p / 3.0, p / 3.0, p / 3.0)
    }

    pub fn px(&self) -> f64 {
        self.px
    }

    pub fn py(&self) -> f64 {
        self.py
    }

    pub fn pz(&self) -> f64 {
        self.pz
    }

    /// Total error probability.
    pub fn p(&self) -> f64 {
        self.px + self.py + self.pz
    }

    pub fn is_depolarizing(&self) -> bool {
        self.px == self.py && self.py == self.pz
    }

    /// `ln` of the probability of one specific Pauli error pattern with
    /// `w` letters of each kind on `n` qubits.
    pub fn log_pattern_probability(&self, w: WeightTriple, n: usize) -> f64 {
        let m = w.total();
        xlogy((n - m) as f64, 1.0 - self.p())
            + xlogy(w.mx as f64, self.px)
            + xlogy(w.my as f64, self.py)
            + xlogy(w.mz as f64, self.pz)
    }
}

/// Stabilizer `S_l` (up to sign) for generator selection `l`.
pub fn stabilizer_from_bits(g: &Graph, bits: &[bool]) -> Result<PauliString> {
    if bits.len() != g.n() {
        return Err(Error::LengthMismatch {
            expected: g.n(),
            got: bits.len(),
        });
    }
    let mut ps = PauliString::identity(g.n());
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        ps.flip_x(i);
        for &j in g.neighbors(i) {
            ps.flip_z(j);
        }
    }
    Ok(ps)
}

pub fn weight_of(ps: &PauliString) -> WeightTriple {
    let mut w = WeightTriple::default();
    for (x, z) in ps.xbits.iter().zip(&ps.zbits) {
        w.mx += (x & !z).count_ones() as usize;
        w.my += (x & z).count_ones() as usize;
        w.mz += (!x & z).count_ones() as usize;
    }
    w
}

/// Counts `N_F(mx, my, mz)` of stabilizers by Pauli content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightHistogram {
    n: usize,
    counts: BTreeMap<WeightTriple, u64>,
}

impl WeightHistogram {
    /// Builds a histogram and checks that it could describe an `n`-qubit
    /// stabilizer group: every triple fits in `n` sites and the counts add up
    /// to `2^n`.
    pub fn new(n: usize, counts: BTreeMap<WeightTriple, u64>) -> Result<Self> {
        let hist = Self { n, counts };
        hist.validate()?;
        Ok(hist)
    }

    #[cfg(test)]
    pub(crate) fn from_counts_unchecked(n: usize, counts: BTreeMap<WeightTriple, u64>) -> Self {
        Self { n, counts }
    }

    pub(crate) fn from_dense(n: usize, dense: &[u64]) -> Self {
        let side = n + 1;
        let mut counts = BTreeMap::new();
        for (k, &c) in dense.iter().enumerate().filter(|(_, &c)| c > 0) {
            let w = WeightTriple::new(k / (side * side), (k / side) % side, k % side);
            counts.insert(w, c);
        }
        Self { n, counts }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n >= 64 {
            return Err(Error::Histogram(format!("n={} too large", self.n)));
        }
        let fits = |w: &WeightTriple| w.mx <= self.n && w.my <= self.n && w.mz <= self.n && w.total() <= self.n;
        if let Some(w) = self.counts.keys().find(|w| !fits(w)) {
            return Err(Error::Histogram(format!(
                "triple ({},{},{}) exceeds n={}",
                w.mx, w.my, w.mz, self.n
            )));
        }
        let total = self
            .counts
            .values()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .ok_or_else(|| Error::Histogram("count overflow".into()))?;
        if total != 1u64 << self.n {
            return Err(Error::Histogram(format!(
                "counts sum to {total}, expected 2^{} = {}",
                self.n,
                1u64 << self.n
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, w: WeightTriple) -> u64 {
        self.counts.get(&w).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (WeightTriple, u64)> + '_ {
        self.counts.iter().map(|(&w, &c)| (w, c))
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// `ln F = ln sum_w N_F(w) (1-p)^{n-m} px^mx py^my pz^mz`.
    pub fn log_fidelity(&self, noise: &NoiseModel) -> f64 {
        let terms: Vec<f64> = self
            .iter()
            .map(|(w, c)| (c as f64).ln() + noise.log_pattern_probability(w, self.n))
            .collect();
        log_sum_exp(&terms)
    }

    /// `mx,my,mz,count` table with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mx,my,mz,count\n");
        for (w, c) in self.iter() {
            let _ = writeln!(out, "{},{},{},{}", w.mx, w.my, w.mz, c);
        }
        out
    }

    /// Parses the output of [`WeightHistogram::to_csv`] and validates it
    /// against `n`.
    pub fn from_csv(n: usize, text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let line_of = |pos: Option<&csv::Position>| pos.map_or(1, |p| p.line() as usize);
        let header = reader.headers().map_err(|e| Error::Parse {
            line: line_of(e.position()),
            msg: e.to_string(),
        })?;
        if header.iter().ne(["mx", "my", "mz", "count"]) {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header mx,my,mz,count".into(),
            });
        }
        let mut counts = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: line_of(e.position()),
                msg: e.to_string(),
            })?;
            let line = line_of(rec.position());
            let bad = |msg: String| Error::Parse { line, msg };
            let mut v = [0u64; 4];
            for (slot, f) in v.iter_mut().zip(rec.iter()) {
                *slot = f.parse().map_err(|e| bad(format!("{f:?}: {e}")))?;
            }
            let as_site = |x: u64| usize::try_from(x).map_err(|_| bad(format!("{x} too large")));
            let w = WeightTriple::new(as_site(v[0])?, as_site(v[1])?, as_site(v[2])?);
            if counts.insert(w, v[3]).is_some() {
                return Err(bad(format!("duplicate triple ({},{},{})", w.mx, w.my, w.mz)));
            }
        }
        Self::new(n, counts)
    }
}

/// Enumerates all `2^n` stabilizers with the default cap.
pub fn enumerate_weights(g: &Graph) -> Result<WeightHistogram> {
    enumerate_weights_with_cap(g, DEFAULT_ENUMERATION_CAP)
}

/// Gray-code enumeration: each step toggles one generator, so the X-part
/// changes in one bit and the Z-part by one precomputed neighbor mask.
/// Disjoint index ranges run in parallel and their dense counts are summed.
pub fn enumerate_weights_with_cap(g: &Graph, cap: usize) -> Result<WeightHistogram> {
    let n = g.n();
    let cap = cap.min(MAX_ENUMERATION_CAP);
    if n > cap {
        return Err(Error::EnumerationCap { n, cap });
    }
    let zmask: Vec<u64> = (0..n)
        .map(|i| g.neighbors(i).iter().fold(0u64, |m, &j| m | 1 << j))
        .collect();
    let side = n + 1;
    let total: u64 = 1 << n;
    let chunk_bits = n.saturating_sub(6).min(14);
    let chunk: u64 = 1 << chunk_bits;
    let chunks = total / chunk;

    let dense = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut dense = vec![0u64; side * side * side];
            let start = c * chunk;
            let gray = start ^ (start >> 1);
            let mut x = gray;
            let mut z = (0..n)
                .filter(|&i| gray >> i & 1 == 1)
                .fold(0u64, |acc, i| acc ^ zmask[i]);
            for k in start..start + chunk {
                if k != start {
                    let t = k.trailing_zeros() as usize;
                    x ^= 1 << t;
                    z ^= zmask[t];
                }
                let mx = (x & !z).count_ones() as usize;
                let my = (x & z).count_ones() as usize;
                let mz = (!x & z).count_ones() as usize;
                dense[(mx * side + my) * side + mz] += 1;
            }
            dense
        })
        .reduce(
            || vec![0u64; side * side * side],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(WeightHistogram::from_dense(n, &dense))
}

/// Exact fidelity by full stabilizer enumeration.
pub fn fidelity_exact(g: &Graph, noise: &NoiseModel) -> Result<f64> {
    Ok(enumerate_weights(g)?.log_fidelity(noise).exp())
}

/// Closed-form fidelity of the `n`-qubit complete-graph state under
/// depolarizing noise of strength `p`.
pub fn fidelity_complete_closed_form(n: usize, p: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Graph("complete graph needs n >= 1".into()));
    }
    if !(0.0..=0.75).contains(&p) {
        return Err(Error::Noise(format!("depolarizing p must lie in [0, 3/4] (got {p})")));
    }
    let n = n as i32;
    let q = 2.0 * p / 3.0;
    Ok(0.5 * ((1.0 - q).powi(n) + q.powi(n) + (1.0 - 2.0 * q).powi(n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_complete, build_ring, Graph};

    fn bits(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn identity_stabilizer() {
        let g = build_ring(4).unwrap();
        let ps = stabilizer_from_bits(&g, &bits("0000")).unwrap();
        assert_eq!(ps.to_string(), "IIII");
    }

    #[test]
    fn single_generator_on_ring() {
        let g = build_ring(4).unwrap();
        let ps = stabilizer_from_bits(&g, &bits("1000")).unwrap();
        assert_eq!(ps.to_string(), "XZIZ");
        assert_eq!(weight_of(&ps), WeightTriple::new(1, 0, 2));
    }

    #[test]
    fn all_generators_on_ring() {
        // Each site collects Z from both ring neighbors; they cancel.
        let g = build_ring(4).unwrap();
        let ps = stabilizer_from_bits(&g, &bits("1111")).unwrap();
        assert_eq!(ps.to_string(), "XXXX");
    }

    #[test]
    fn length_mismatch() {
        let g = build_ring(4).unwrap();
        assert_eq!(
            stabilizer_from_bits(&g, &bits("101")),
            Err(Error::LengthMismatch { expected: 4, got: 3 })
        );
    }

    #[test]
    fn weights_of_literals() {
        assert_eq!(weight_of(&PauliString::identity(5)), WeightTriple::default());
        let ps = PauliString::from_ops(&[Pauli::X, Pauli::Z, Pauli::Z, Pauli::I]);
        assert_eq!(weight_of(&ps), WeightTriple::new(1, 0, 2));
        let ps = PauliString::from_ops(&[Pauli::Y; 3]);
        assert_eq!(weight_of(&ps), WeightTriple::new(0, 3, 0));
        let long = PauliString::from_ops(&[Pauli::Y; 130]);
        assert_eq!(weight_of(&long), WeightTriple::new(0, 130, 0));
    }

    #[test]
    fn single_vertex_histogram() {
        let h = enumerate_weights(&build_complete(1).unwrap()).unwrap();
        let expected: BTreeMap<_, _> =
            [(WeightTriple::new(0, 0, 0), 1), (WeightTriple::new(1, 0, 0), 1)].into();
        assert_eq!(h, WeightHistogram::new(1, expected).unwrap());
    }

    #[test]
    fn two_vertex_histogram() {
        // Stabilizers II, XZ, ZX, YY.
        let h = enumerate_weights(&build_complete(2).unwrap()).unwrap();
        let expected: BTreeMap<_, _> = [
            (WeightTriple::new(0, 0, 0), 1),
            (WeightTriple::new(1, 0, 1), 2),
            (WeightTriple::new(0, 2, 0), 1),
        ]
        .into();
        assert_eq!(h, WeightHistogram::new(2, expected).unwrap());
    }

    #[test]
    fn ring_histogram_normalized() {
        let h = enumerate_weights(&build_ring(4).unwrap()).unwrap();
        assert_eq!(h.total(), 16);
        assert_eq!(h.get(WeightTriple::default()), 1);
    }

    #[test]
    fn gray_code_matches_direct_products() {
        let g = Graph::from_edges(7, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 6), (6, 1)], "t")
            .unwrap();
        let mut direct = BTreeMap::new();
        for l in 0u32..128 {
            let b: Vec<bool> = (0..7).map(|i| l >> i & 1 == 1).collect();
            let w = weight_of(&stabilizer_from_bits(&g, &b).unwrap());
            *direct.entry(w).or_insert(0u64) += 1;
        }
        assert_eq!(enumerate_weights(&g).unwrap(), WeightHistogram::new(7, direct).unwrap());
    }

    #[test]
    fn cap_enforced() {
        let g = build_ring(22).unwrap();
        let err = enumerate_weights(&g).unwrap_err();
        assert!(err.to_string().contains("Monte Carlo"));
        assert!(enumerate_weights_with_cap(&build_ring(8).unwrap(), 6).is_err());
    }

    #[test]
    fn fidelity_limits() {
        let g = build_ring(6).unwrap();
        let f0 = fidelity_exact(&g, &NoiseModel::depolarizing(0.0).unwrap()).unwrap();
        assert_eq!(f0, 1.0);
        let fmax = fidelity_exact(&g, &NoiseModel::depolarizing(0.75).unwrap()).unwrap();
        assert!((fmax - 2f64.powi(-6)).abs() < 1e-15);
    }

    #[test]
    fn closed_form_limits() {
        for n in 1..12 {
            assert_eq!(fidelity_complete_closed_form(n, 0.0).unwrap(), 1.0);
            let f = fidelity_complete_closed_form(n, 0.75).unwrap();
            assert!((f - 0.5f64.powi(n as i32)).abs() < 1e-16);
        }
        assert!(fidelity_complete_closed_form(3, 0.8).is_err());
        assert!(fidelity_complete_closed_form(0, 0.1).is_err());
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseModel::new(-0.1, 0.0, 0.0).is_err());
        assert!(NoiseModel::new(0.5, 0.4, 0.2).is_err());
        assert!(NoiseModel::depolarizing(0.76).is_err());
        assert!(NoiseModel::depolarizing(0.3).unwrap().is_depolarizing());
        assert!(!NoiseModel::new(0.1, 0.0, 0.2).unwrap().is_depolarizing());
    }

    #[test]
    fn histogram_csv_round_trip() {
        let h = enumerate_weights(&build_ring(6).unwrap()).unwrap();
        let text = h.to_csv();
        assert!(text.starts_with("mx,my,mz,count\n"));
        assert_eq!(WeightHistogram::from_csv(6, &text).unwrap(), h);
    }

    #[test]
    fn histogram_csv_errors() {
        assert!(WeightHistogram::from_csv(1, "").is_err());
        assert!(WeightHistogram::from_csv(1, "a,b\n").is_err());
        assert!(WeightHistogram::from_csv(1, "mx,my,mz,count\n0,0,0\n").is_err());
        assert!(WeightHistogram::from_csv(1, "mx,my,mz,count\n0,0,0,1\n").is_err());
        assert!(WeightHistogram::from_csv(1, "mx,my,mz,count\n0,0,0,1\n0,0,0,1\n").is_err());
        assert!(WeightHistogram::from_csv(1, "mx,my,mz,count\n0,0,0,1\n2,0,0,1\n").is_err());
        assert!(WeightHistogram::from_csv(1, "mx,my,mz,count\n0,0,0,1\n1,0,0,1\n").is_ok());
    }
}
