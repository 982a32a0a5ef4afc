use std::collections::HashMap;
use std::fmt;

use cgtn_tensor::{Element, Tensor};

use crate::error::{CoreError, Result};

/// A product of input variables, stored as the sorted multiset of their
/// indices. The empty multiset is the constant term.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonomialIndex {
    vars: Vec<u16>,
}

impl MonomialIndex {
    pub fn new(mut vars: Vec<u16>) -> Self {
        vars.sort_unstable();
        MonomialIndex { vars }
    }

    pub fn constant() -> Self {
        MonomialIndex { vars: Vec::new() }
    }

    pub fn vars(&self) -> &[u16] {
        &self.vars
    }

    pub fn degree(&self) -> usize {
        self.vars.len()
    }

    pub fn is_constant(&self) -> bool {
        self.vars.is_empty()
    }

    /// Multiplicity of each distinct variable, in ascending variable order.
    pub fn multiplicities(&self) -> Vec<(u16, usize)> {
        let mut out: Vec<(u16, usize)> = Vec::new();
        for &v in &self.vars {
            match out.last_mut() {
                Some((last, count)) if *last == v => *count += 1,
                _ => out.push((v, 1)),
            }
        }
        out
    }

    /// Product of the two multisets.
    pub fn merged(&self, other: &MonomialIndex) -> MonomialIndex {
        let mut vars = Vec::with_capacity(self.vars.len() + other.vars.len());
        vars.extend_from_slice(&self.vars);
        vars.extend_from_slice(&other.vars);
        MonomialIndex::new(vars)
    }

    pub fn evaluate<E: Element>(&self, point: &[E]) -> E {
        let mut acc = E::one();
        for &v in &self.vars {
            acc *= point[v as usize];
        }
        acc
    }
}

impl fmt::Display for MonomialIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.vars.is_empty() {
            return write!(f, "1");
        }
        for (i, (v, count)) in self.multiplicities().into_iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            // Display is one-based: x1..xN.
            if count == 1 {
                write!(f, "x{}", v + 1)?;
            } else {
                write!(f, "x{}^{}", v + 1, count)?;
            }
        }
        Ok(())
    }
}

/// C(numVars + maxOrder, maxOrder), the number of monomials in `numVars`
/// variables of degree at most `maxOrder`. Errors instead of wrapping.
pub fn monomial_count(num_vars: usize, max_order: usize) -> Result<usize> {
    let n = num_vars as u128;
    let mut acc: u128 = 1;
    for i in 1..=(max_order as u128) {
        acc = acc.checked_mul(n + i).ok_or_else(|| {
            CoreError::Overflow(format!(
                "monomial count for {num_vars} variables at order {max_order}"
            ))
        })?;
        acc /= i;
    }
    usize::try_from(acc).map_err(|_| {
        CoreError::Overflow(format!(
            "monomial count for {num_vars} variables at order {max_order}"
        ))
    })
}

/// All monomials of degree at most `max_order` over variables
/// `0..num_vars`, in graded lexicographic order: the constant first, then
/// each degree block in lexicographic order of the variable sequence.
pub fn enumerate_monomials(num_vars: usize, max_order: usize) -> Result<Vec<MonomialIndex>> {
    if num_vars == 0 {
        return Err(CoreError::Config(
            "monomials need at least one variable".into(),
        ));
    }
    if num_vars > u16::MAX as usize {
        return Err(CoreError::Overflow(format!(
            "{num_vars} variables exceed the u16 index space"
        )));
    }
    let total = monomial_count(num_vars, max_order)?;
    let mut out = Vec::with_capacity(total);
    out.push(MonomialIndex::constant());
    let mut prev_block = 0..1usize;
    for _degree in 1..=max_order {
        let start = out.len();
        for parent_idx in prev_block.clone() {
            let lowest = out[parent_idx].vars.last().copied().unwrap_or(0);
            for v in lowest..num_vars as u16 {
                let mut vars = out[parent_idx].vars.clone();
                vars.push(v);
                out.push(MonomialIndex { vars });
            }
        }
        prev_block = start..out.len();
    }
    debug_assert_eq!(out.len(), total);
    Ok(out)
}

///// Evaluation schedule over an enumerated monomial list: every non-constant
/// monomial extends an earlier one by a single variable, so a batch of
/// features costs one multiply per term.
#[derive(Debug, Clone)]
pub struct FeaturePlan {
    num_vars: usize,
    parent: Vec<u32>,
    last_var: Vec<u16>,
    /// Partial-derivative table: (term, variable, term with one copy of
    /// that variable removed, multiplicity).
    derivs: Vec<(u32, u16, u32, u8)>,
}

impl FeaturePlan {
    pub fn new(terms: &[MonomialIndex], num_vars: usize) -> Result<Self> {
        let mut index: HashMap<&[u16], u32> = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if let Some(&v) = t.vars.last() {
                if v as usize >= num_vars {
                    return Err(CoreError::Config(format!(
                        "term {t} references variable x{} beyond the {num_vars}-variable input",
                        v + 1
                    )));
                }
            }
            if index.insert(t.vars.as_slice(), i as u32).is_some() {
                return Err(CoreError::Config(format!("duplicate term {t}")));
            }
        }
        if !terms.is_empty() && !terms[0].is_constant() {
            return Err(CoreError::Config(
                "term list must start with the constant term".into(),
            ));
        }
        let mut parent = vec![0u32; terms.len()];
        let mut last_var = vec![0u16; terms.len()];
        let mut derivs = Vec::new();
        let mut scratch = Vec::new();
        for (i, t) in terms.iter().enumerate() {
            if t.is_constant() {
                continue;
            }
            let body = &t.vars[..t.vars.len() - 1];
            parent[i] = *index.get(body).ok_or_else(|| {
                CoreError::Config(format!("term {t} lacks its parent in the term list"))
            })?;
            if parent[i] as usize >= i {
                return Err(CoreError::Config(format!(
                    "term {t} appears before its parent"
                )));
            }
            last_var[i] = *t.vars.last().unwrap();
            for (v, count) in t.multiplicities() {
                scratch.clear();
                scratch.extend_from_slice(&t.vars);
                let pos = scratch.iter().position(|&x| x == v).unwrap();
                scratch.remove(pos);
                let reduced = *index.get(scratch.as_slice()).ok_or_else(|| {
                    CoreError::Config(format!("term {t} lacks a derivative parent"))
                })?;
                derivs.push((i as u32, v, reduced, count as u8));
            }
        }
        Ok(FeaturePlan {
            num_vars,
            parent,
            last_var,
            derivs,
        })
    }

    pub fn num_terms(&self) -> usize {
        self.parent.len()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Build order for the non-constant terms: (term, parent term, variable
    /// multiplied onto the parent).
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (1..self.parent.len()).map(move |t| (t, self.parent[t] as usize, self.last_var[t] as usize))
    }

    /// Writes the feature vector for one flattened image into `out`.
    /// `out[0]` is the constant 1; term order matches the enumerated list.
    pub fn featurize_into<E: Element>(&self, image: &[E], out: &mut [E]) {
        debug_assert!(image.len() >= self.num_vars);
        debug_assert_eq!(out.len(), self.parent.len());
        if out.is_empty() {
            return;
        }
        out[0] = E::one();
        for t in 1..out.len() {
            out[t] = out[self.parent[t] as usize] * image[self.last_var[t] as usize];
        }
    }

    /// Accumulates `scale * d(coeff · features)/d(image)` into `dimage`,
    /// given the already-computed feature values.
    pub fn accumulate_input_grad<E: Element>(
        &self,
        coeff: &[E],
        values: &[E],
        scale: E,
        dimage: &mut [E],
    ) {
        for &(t, v, reduced, mult) in &self.derivs {
            let w = coeff[t as usize];
            if w != E::zero() {
                dimage[v as usize] +=
                    scale * w * E::from_f64(mult as f64) * values[reduced as usize];
            }
        }
    }
}

/// Feature vector of one image under the given term list.
pub fn featurize<E: Element>(image: &Tensor<E>, terms: &[MonomialIndex]) -> Result<Tensor<E>> {
    let plan = FeaturePlan::new(terms, image.numel())?;
    let mut out = vec![E::zero(); terms.len()];
    plan.featurize_into(image.data(), &mut out);
    Ok(Tensor::new(vec![terms.len()], out)?)
}
