use std::collections::BTreeMap;
use std::fmt;

use cgtn_tensor::Element;
use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{FlowShape, LayerKind, Network};
use crate::error::{CoreError, Result};
use crate::layers::ClusterScope;
use crate::monomial::MonomialIndex;

/// Highest total degree `pow` accepts without an explicit limit.
pub const DEFAULT_MAX_DEGREE: usize = 16;

/// Coefficient ring for the symbolic engine: exact rationals for oracle
/// runs, 64-bit floats when speed matters more than exactness.
pub trait Coeff: Clone + PartialEq + fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn add_assign(&mut self, other: &Self);
    fn mul(&self, other: &Self) -> Self;
    fn neg(&self) -> Self;
    fn from_i64(v: i64) -> Self;
    fn from_ratio(num: i64, den: i64) -> Self;
    /// Exact conversion for rationals (every finite float is rational).
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Coeff for BigRational {
    fn zero() -> Self {
        <BigRational as Zero>::zero()
    }

    fn one() -> Self {
        <BigRational as num_traits::One>::one()
    }

    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }

    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }

    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn neg(&self) -> Self {
        -self
    }

    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn from_f64(v: f64) -> Self {
        Ratio::from_float(v).unwrap_or_else(|| <BigRational as Zero>::zero())
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl Coeff for f64 {
    fn zero() -> Self {
        0.0
    }

    fn one() -> Self {
        1.0
    }

    fn is_zero(&self) -> bool {
        *self == 0.0
    }

    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }

    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn neg(&self) -> Self {
        -self
    }

    fn from_i64(v: i64) -> Self {
        v as f64
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

/// Sparse multivariate polynomial. Zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial<C: Coeff> {
    terms: BTreeMap<MonomialIndex, C>,
}

impl<C: Coeff> Polynomial<C> {
    pub fn zero() -> Self {
        Polynomial {
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(c: C) -> Self {
        let mut p = Polynomial::zero();
        p.add_term(MonomialIndex::constant(), c);
        p
    }

    pub fn var(index: usize) -> Self {
        let mut p = Polynomial::zero();
        p.add_term(MonomialIndex::new(vec![index as u16]), C::one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    pub fn coeff(&self, mono: &MonomialIndex) -> Option<&C> {
        self.terms.get(mono)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MonomialIndex, &C)> {
        self.terms.iter()
    }

    /// Monomials with nonzero coefficient, in graded lexicographic order.
    pub fn support(&self) -> Vec<MonomialIndex> {
        let mut out: Vec<MonomialIndex> = self.terms.keys().cloned().collect();
        out.sort_by(|a, b| a.degree().cmp(&b.degree()).then_with(|| a.cmp(b)));
        out
    }

    pub fn add_term(&mut self, mono: MonomialIndex, c: C) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&mono) {
            Some(existing) => {
                existing.add_assign(&c);
                if existing.is_zero() {
                    self.terms.remove(&mono);
                }
            }
            None => {
                self.terms.insert(mono, c);
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.neg());
        }
        out
    }

    pub fn scale(&self, c: &C) -> Self {
        let mut out = Polynomial::zero();
        if c.is_zero() {
            return out;
        }
        for (m, v) in &self.terms {
            out.add_term(m.clone(), v.mul(c));
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Polynomial::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.merged(mb), ca.mul(cb));
            }
        }
        out
    }

    /// `self^exp`, refusing results whose degree would exceed
    /// [`DEFAULT_MAX_DEGREE`]. Use [`Polynomial::pow_with_limit`] to raise
    /// the bound deliberately.
    pub fn pow(&self, exp: usize) -> Result<Self> {
        self.pow_with_limit(exp, DEFAULT_MAX_DEGREE)
    }

    pub fn pow_with_limit(&self, exp: usize, max_degree: usize) -> Result<Self> {
        if self.degree().saturating_mul(exp) > max_degree {
            return Err(CoreError::Overflow(format!(
                "degree {} raised to power {exp} exceeds the limit {max_degree}",
                self.degree()
            )));
        }
        let mut out = Polynomial::constant(C::one());
        for _ in 0..exp {
            out = out.mul(self);
        }
        Ok(out)
    }

    /// Replaces variable `i` by `subs[i]` everywhere and expands fully.
    pub fn substitute(&self, subs: &[Polynomial<C>]) -> Result<Self> {
        let mut out = Polynomial::zero();
        for (mono, c) in &self.terms {
            let mut term = Polynomial::constant(c.clone());
            for &v in mono.vars() {
                let replacement = subs.get(v as usize).ok_or_else(|| {
                    CoreError::Config(format!(
                        "substitution list has no entry for variable x{}",
                        v + 1
                    ))
                })?;
                term = term.mul(replacement);
            }
            out = out.add(&term);
        }
        Ok(out)
    }

    pub fn evaluate(&self, point: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (mono, c) in &self.terms {
            let mut prod = c.to_f64();
            for &v in mono.vars() {
                prod *= point[v as usize];
            }
            acc += prod;
        }
        acc
    }
}

impl<C: Coeff> fmt::Display for Polynomial<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, mono) in self.support().into_iter().enumerate() {
            let c = &self.terms[&mono];
            if i > 0 {
                write!(f, " + ")?;
            }
            if mono.is_constant() {
                write!(f, "{c:?}")?;
            } else {
                write!(f, "{c:?}*{mono}")?;
            }
        }
        Ok(())
    }
}

/// Exact symbolic forward pass of a network whose layers are all
/// polynomial (conv, CG, linear, pooling, residual). Returns one
/// polynomial in the flattened input variables per final output. Errors
/// if the architecture contains non-polynomial layers or if the expanded
/// term count exceeds `term_budget`.
pub fn expand_network<C: Coeff, E: Element>(
    net: &Network<E>,
    term_budget: usize,
) -> Result<Vec<Polynomial<C>>> {
    let (c, h, w) = net.input_shape;
    let vars: Vec<Polynomial<C>> = (0..c * h * w).map(Polynomial::var).collect();
    expand_network_on(net, vars, term_budget)
}

/// As [`expand_network`], but starting from caller-supplied input
/// polynomials (one per flattened input cell).
pub fn expand_network_on<C: Coeff, E: Element>(
    net: &Network<E>,
    inputs: Vec<Polynomial<C>>,
    term_budget: usize,
) -> Result<Vec<Polynomial<C>>> {
    let (c, h, w) = net.input_shape;
    if inputs.len() != c * h * w {
        return Err(CoreError::Config(format!(
            "expected {} input polynomials, got {}",
            c * h * w,
            inputs.len()
        )));
    }
    let mut cells = inputs;
    let mut shape = FlowShape::Spatial { c, h, w };
    let mut residual_stack: Vec<Vec<Polynomial<C>>> = Vec::new();

    for (idx, spec) in net.specs().iter().enumerate() {
        match spec.kind {
            LayerKind::Conv | LayerKind::Cg | LayerKind::DiCg => {
                let geom = net.geometry(idx).ok_or_else(|| CoreError::Shape {
                    layer: idx,
                    message: "missing geometry".into(),
                })?;
                let mut out = vec![Polynomial::zero(); geom.out_c * geom.out_h * geom.out_w];
                if spec.kind == LayerKind::Conv {
                    let weight = net.param_data(idx, "weight")?;
                    let bias = net.param_data(idx, "bias")?;
                    let klen = geom.l1 * geom.l2;
                    for co in 0..geom.out_c {
                        for oy in 0..geom.out_h {
                            for ox in 0..geom.out_w {
                                let mut acc = Polynomial::constant(C::from_f64(bias[co]));
                                for ci in 0..geom.in_c {
                                    for ky in 0..geom.l1 {
                                        for kx in 0..geom.l2 {
                                            let Some((iy, ix)) = geom.source(oy, ox, ky, kx) else {
                                                continue;
                                            };
                                            let wv = weight[co * geom.in_c * klen
                                                + ci * klen
                                                + ky * geom.l2
                                                + kx];
                                            let cell = &cells
                                                [ci * geom.in_h * geom.in_w + iy * geom.in_w + ix];
                                            acc = acc.add(&cell.scale(&C::from_f64(wv)));
                                        }
                                    }
                                }
                                out[co * geom.out_h * geom.out_w + oy * geom.out_w + ox] = acc;
                            }
                        }
                    }
                } else {
                    let coeff = net.param_data(idx, "coeff")?;
                    let plan = net.cg_plan(idx).ok_or_else(|| CoreError::Shape {
                        layer: idx,
                        message: "missing coarse-graining plan".into(),
                    })?;
                    let num_terms = plan.num_terms();
                    let cluster_channels: Vec<usize> = match spec.scope {
                        ClusterScope::PerChannel => Vec::new(),
                        ClusterScope::Full => (0..geom.in_c).collect(),
                    };
                    for co in 0..geom.out_c {
                        let co_coeff = &coeff[co * num_terms..(co + 1) * num_terms];
                        for oy in 0..geom.out_h {
                            for ox in 0..geom.out_w {
                                let mut cluster: Vec<Polynomial<C>> = Vec::new();
                                let channels: &[usize] = match spec.scope {
                                    ClusterScope::PerChannel => std::slice::from_ref(&co),
                                    ClusterScope::Full => &cluster_channels,
                                };
                                for &ci in channels {
                                    for ky in 0..geom.l1 {
                                        for kx in 0..geom.l2 {
                                            cluster.push(match geom.source(oy, ox, ky, kx) {
                                                Some((iy, ix)) => cells[ci * geom.in_h * geom.in_w
                                                    + iy * geom.in_w
                                                    + ix]
                                                    .clone(),
                                                None => Polynomial::zero(),
                                            });
                                        }
                                    }
                                }
                                let mut vals: Vec<Polynomial<C>> = Vec::with_capacity(num_terms);
                                vals.push(Polynomial::constant(C::one()));
                                for (_, parent, var) in plan.steps() {
                                    let next = vals[parent].mul(&cluster[var]);
                                    vals.push(next);
                                }
                                let mut acc = Polynomial::zero();
                                for (t, val) in vals.iter().enumerate() {
                                    acc = acc.add(&val.scale(&C::from_f64(co_coeff[t])));
                                }
                                out[co * geom.out_h * geom.out_w + oy * geom.out_w + ox] = acc;
                            }
                        }
                    }
                }
                cells = out;
                shape = FlowShape::Spatial {
                    c: geom.out_c,
                    h: geom.out_h,
                    w: geom.out_w,
                };
            }
            LayerKind::AvgPool => {
                let FlowShape::Spatial { c, h, w } = shape else {
                    return Err(CoreError::Shape {
                        layer: idx,
                        message: "pooling needs a spatial input".into(),
                    });
                };
                let k = spec.kernel.0;
                let s = spec.stride.0;
                let oh = (h - k) / s + 1;
                let ow = (w - k) / s + 1;
                let inv = C::from_ratio(1, (k * k) as i64);
                let mut out = vec![Polynomial::zero(); c * oh * ow];
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = Polynomial::zero();
                            for ky in 0..k {
                                for kx in 0..k {
                                    acc = acc.add(
                                        &cells[ci * h * w + (oy * s + ky) * w + (ox * s + kx)],
                                    );
                                }
                            }
                            out[ci * oh * ow + oy * ow + ox] = acc.scale(&inv);
                        }
                    }
                }
                cells = out;
                shape = FlowShape::Spatial { c, h: oh, w: ow };
            }
            LayerKind::Flatten => {
                shape = FlowShape::Flat { n: cells.len() };
            }
            LayerKind::Linear => {
                let FlowShape::Flat { n } = shape else {
                    return Err(CoreError::Shape {
                        layer: idx,
                        message: "linear needs a flattened input".into(),
                    });
                };
                let weight = net.param_data(idx, "weight")?;
                let bias = net.param_data(idx, "bias")?;
                let out_n = spec.channels;
                let mut out = Vec::with_capacity(out_n);
                for o in 0..out_n {
                    let mut acc = Polynomial::constant(C::from_f64(bias[o]));
                    for (i, cell) in cells.iter().enumerate().take(n) {
                        acc = acc.add(&cell.scale(&C::from_f64(weight[i * out_n + o])));
                    }
                    out.push(acc);
                }
                cells = out;
                shape = FlowShape::Flat { n: out_n };
            }
            LayerKind::ResidualBegin => {
                residual_stack.push(cells.clone());
            }
            LayerKind::ResidualEnd => {
                let saved = residual_stack.pop().ok_or_else(|| CoreError::Shape {
                    layer: idx,
                    message: "residual end without a begin".into(),
                })?;
                for (cell, s) in cells.iter_mut().zip(saved) {
                    *cell = cell.add(&s);
                }
            }
            LayerKind::Relu | LayerKind::InstNorm => {
                return Err(CoreError::Config(format!(
                    "layer {} ({}) is not polynomial; symbolic expansion covers \
                     activation-free stacks only",
                    idx,
                    spec.canonical()
                )));
            }
        }
        let total: usize = cells.iter().map(|p| p.num_terms()).sum();
        if total > term_budget {
            return Err(CoreError::Overflow(format!(
                "expansion reached {total} terms after layer {idx}, budget {term_budget}"
            )));
        }
    }
    Ok(cells)
}

/// Agreement between a symbolic expansion and the numeric forward pass.
#[derive(Debug, Clone)]
pub struct AgreementReport {
    pub trials: usize,
    pub max_rel_err: f64,
    pub worst_output: usize,
    pub worst_point: Vec<f64>,
}

/// Evaluates both the polynomials and the network at random points in
/// [0,1]^N and reports the worst relative disagreement.
pub fn verify_against_numeric<C: Coeff>(
    polys: &[Polynomial<C>],
    net: &Network<f64>,
    trials: usize,
    seed: u64,
) -> Result<AgreementReport> {
    let (c, h, w) = net.input_shape;
    let n = c * h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AgreementReport {
        trials,
        max_rel_err: 0.0,
        worst_output: 0,
        worst_point: Vec::new(),
    };
    for _ in 0..trials {
        let point: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let input = cgtn_tensor::Tensor::new(vec![1, c, h, w], point.clone())?;
        let numeric = net.eval(&input)?;
        if numeric.numel() != polys.len() {
            return Err(CoreError::Config(format!(
                "network produces {} outputs but {} polynomials were given",
                numeric.numel(),
                polys.len()
            )));
        }
        for (i, poly) in polys.iter().enumerate() {
            let a = poly.evaluate(&point);
            let b = numeric.data()[i];
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-9);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_output = i;
                report.worst_point = point.clone();
            }
        }
    }
    Ok(report)
}

/// Factors every monomial of `poly` as (part over `left_vars`) x (part
/// over `right_vars`) and marks which pairs occur. Rows and columns list
/// all monomials of degree at most `max_order` over each side, in graded
/// lexicographic order; entry (i,j) is true when row_i * col_j has a
/// nonzero coefficient.
pub fn support_matrix<C: Coeff>(
    poly: &Polynomial<C>,
    left_vars: &[usize],
    right_vars: &[usize],
    max_order: usize,
) -> Result<(Vec<MonomialIndex>, Vec<MonomialIndex>, Vec<Vec<bool>>)> {
    let rows = side_monomials(left_vars, max_order)?;
    let cols = side_monomials(right_vars, max_order)?;
    let row_index: BTreeMap<&MonomialIndex, usize> =
        rows.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let col_index: BTreeMap<&MonomialIndex, usize> =
        cols.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let mut grid = vec![vec![false; cols.len()]; rows.len()];
    for (mono, _) in poly.terms() {
        let mut left = Vec::new();
        let mut right = Vec::new();
        for &v in mono.vars() {
            if left_vars.contains(&(v as usize)) {
                left.push(v);
            } else if right_vars.contains(&(v as usize)) {
                right.push(v);
            } else {
                return Err(CoreError::Config(format!(
                    "monomial {mono} uses variable x{} outside both factor sets",
                    v + 1
                )));
            }
        }
        let lm = MonomialIndex::new(left);
        let rm = MonomialIndex::new(right);
        let (Some(&ri), Some(&ci)) = (row_index.get(&lm), col_index.get(&rm)) else {
            return Err(CoreError::Config(format!(
                "monomial {mono} exceeds the order-{max_order} factor lists"
            )));
        };
        grid[ri][ci] = true;
    }
    Ok((rows, cols, grid))
}

fn side_monomials(vars: &[usize], max_order: usize) -> Result<Vec<MonomialIndex>> {
    let local = crate::monomial::enumerate_monomials(vars.len(), max_order)?;
    Ok(local
        .into_iter()
        .map(|m| MonomialIndex::new(m.vars().iter().map(|&v| vars[v as usize] as u16).collect()))
        .collect())
}

/// Renders a support matrix as CSV: header row of column monomials, then
/// one line per row monomial with 0/1 entries.
pub fn support_matrix_csv(
    rows: &[MonomialIndex],
    cols: &[MonomialIndex],
    grid: &[Vec<bool>],
) -> String {
    let mut out = String::new();
    out.push_str("monomial");
    for c in cols {
        out.push(',');
        out.push_str(&c.to_string());
    }
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&r.to_string());
        for cell in &grid[i] {
            out.push(',');
            out.push(if *cell { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}
