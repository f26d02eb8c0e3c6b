//! Model groups: subsets of levels evaluated on a shared random event.
//!
//! Groups are kept in a canonical order (by size, then lexicographically) so
//! coefficient indexing and CSV artifacts are reproducible across runs.

use crate::error::{Error, Result};
use crate::family::CostModel;
use crate::linalg::Matrix;
use crate::num::Real;

/// Combinatorial guard: enumerating all subsets beyond this is a config bug.
pub const MAX_ENUMERATED_LEVELS: usize = 20;

/// Nonempty, strictly increasing set of levels (1-based).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelGroup {
    levels: Vec<usize>,
}

impl ModelGroup {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("model group: must be nonempty"));
        }
        if levels[0] == 0 {
            return Err(Error::invalid("model group: levels are 1-based"));
        }
        for w in levels.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid(
                    "model group: levels must be strictly increasing",
                ));
            }
        }
        Ok(ModelGroup { levels })
    }

    /// Contiguous group `{lo..=hi}`.
    pub fn range(lo: usize, hi: usize) -> Result<Self> {
        if lo == 0 || hi < lo {
            return Err(Error::invalid("model group: bad range"));
        }
        Ok(ModelGroup {
            levels: (lo..=hi).collect(),
        })
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn size(&self) -> usize {
        self.levels.len()
    }

    pub fn max_level(&self) -> usize {
        *self.levels.last().expect("nonempty")
    }

    pub fn contains(&self, level: usize) -> bool {
        self.levels.binary_search(&level).is_ok()
    }

    /// Serialized form used in CSV artifacts, e.g. `1;3;4`.
    pub fn label(&self) -> String {
        self.levels
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }
}

impl std::fmt::Display for ModelGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{{}}}", self.label())
    }
}

/// An ordered collection of distinct groups with evaluation costs.
#[derive(Clone, Debug)]
pub struct GroupSystem {
    n_levels: usize,
    coupling: usize,
    groups: Vec<ModelGroup>,
    costs: Vec<f64>,
}

impl GroupSystem {
    /// Build from an explicit group list; validates distinctness and level
    /// bounds, computes `W_k = Σ_{ℓ ∈ S^k} w_ℓ`.
    pub fn from_groups(
        groups: Vec<ModelGroup>,
        cost: &CostModel,
        n_levels: usize,
    ) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("group system: no groups"));
        }
        let mut seen = std::collections::HashSet::new();
        let mut coupling = 0;
        for g in &groups {
            if g.max_level() > n_levels {
                return Err(Error::invalid(format!(
                    "group {g} references level beyond {n_levels}"
                )));
            }
            if !seen.insert(g.clone()) {
                return Err(Error::invalid(format!("group {g} appears twice")));
            }
            coupling = coupling.max(g.size());
        }
        let costs = groups
            .iter()
            .map(|g| group_cost(g, cost))
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupSystem {
            n_levels,
            coupling,
            groups,
            costs,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn coupling(&self) -> usize {
        self.coupling
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[ModelGroup] {
        &self.groups
    }

    pub fn group(&self, k: usize) -> &ModelGroup {
        &self.groups[k]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn cost(&self, k: usize) -> f64 {
        self.costs[k]
    }

    /// Index of a group with exactly these levels, if present.
    pub fn position(&self, levels: &[usize]) -> Option<usize> {
        self.groups.iter().position(|g| g.levels() == levels)
    }
}

/// All nonempty subsets of `{1..n_levels}` with size at most
/// `min(coupling, n_levels)`, in canonical order.
pub fn enumerate_groups(
    n_levels: usize,
    coupling: usize,
    cost: &CostModel,
) -> Result<GroupSystem> {
    if n_levels == 0 {
        return Err(Error::invalid("enumerate_groups: need at least one level"));
    }
    if n_levels > MAX_ENUMERATED_LEVELS {
        return Err(Error::invalid(format!(
            "enumerate_groups: {n_levels} levels exceeds the enumeration guard of {MAX_ENUMERATED_LEVELS}"
        )));
    }
    if coupling == 0 {
        return Err(Error::invalid("enumerate_groups: coupling must be >= 1"));
    }
    let q = coupling.min(n_levels);
    let mut groups = Vec::new();
    for mask in 1u32..(1u32 << n_levels) {
        if (mask.count_ones() as usize) <= q {
            let levels: Vec<usize> = (0..n_levels)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| i + 1)
                .collect();
            groups.push(ModelGroup { levels });
        }
    }
    groups.sort_by(|a, b| (a.size(), a.levels()).cmp(&(b.size(), b.levels())));
    GroupSystem::from_groups(groups, cost, n_levels)
}

/// Total cost of evaluating all models in a group.
pub fn group_cost(group: &ModelGroup, cost: &CostModel) -> Result<f64> {
    let mut acc = 0.0;
    for &level in group.levels() {
        acc += cost.level_cost(level)?;
    }
    Ok(acc)
}

/// Principal submatrix `C^k = (c_{ℓj})_{ℓ,j ∈ S^k}`.
pub fn principal_submatrix<T: Real>(cov: &Matrix<T>, group: &ModelGroup) -> Matrix<T> {
    let s = group.size();
    let mut sub = Matrix::<T>::zeros(s, s);
    for (a, &i) in group.levels().iter().enumerate() {
        for (b, &j) in group.levels().iter().enumerate() {
            sub[(a, b)] = cov[(i - 1, j - 1)];
        }
    }
    sub
}

/// Restriction `R^k v = v_{S^k}`.
pub fn restrict<T: Real>(v: &[T], group: &ModelGroup) -> Vec<T> {
    group.levels().iter().map(|&l| v[l - 1]).collect()
}

/// Prolongation `P^k = (R^k)ᵀ`: scatter to a length-`n_levels` vector.
pub fn prolong<T: Real>(v_s: &[T], group: &ModelGroup, n_levels: usize) -> Vec<T> {
    assert_eq!(v_s.len(), group.size(), "prolong: dimension mismatch");
    let mut v = vec![T::zero(); n_levels];
    for (a, &l) in group.levels().iter().enumerate() {
        v[l - 1] = v_s[a];
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::ExpansionFamily;

    fn unit_cost() -> CostModel {
        CostModel::table(vec![1.0; 8]).unwrap()
    }

    #[test]
    fn two_levels_full_coupling() {
        let sys = enumerate_groups(2, 2, &unit_cost()).unwrap();
        let labels: Vec<String> = sys.groups().iter().map(|g| g.label()).collect();
        assert_eq!(labels, vec!["1", "2", "1;2"]);
        assert_eq!(sys.len(), 3); // 2^2 - 1
    }

    #[test]
    fn coupling_one_gives_singletons() {
        let sys = enumerate_groups(3, 1, &unit_cost()).unwrap();
        assert_eq!(sys.len(), 3);
        assert!(sys.groups().iter().all(|g| g.size() == 1));
    }

    #[test]
    fn six_levels_coupling_three_counts_binomials() {
        let sys = enumerate_groups(6, 3, &unit_cost()).unwrap();
        assert_eq!(sys.len(), 6 + 15 + 20);
    }

    #[test]
    fn enumeration_guard() {
        assert!(enumerate_groups(21, 2, &unit_cost()).is_err());
    }

    #[test]
    fn coupling_larger_than_levels_is_clamped() {
        let sys = enumerate_groups(2, usize::MAX.min(100), &unit_cost()).unwrap();
        assert_eq!(sys.len(), 3);
        assert_eq!(sys.coupling(), 2);
    }

    #[test]
    fn group_cost_sums_table() {
        let cost = CostModel::table(vec![1.0, 4.0]).unwrap();
        let g = ModelGroup::new(vec![1, 2]).unwrap();
        assert_eq!(group_cost(&g, &cost).unwrap(), 5.0);
    }

    #[test]
    fn geometric_singleton_cost() {
        let cost = CostModel::geometric(1.0, 2.0).unwrap();
        for k in 1..=5usize {
            let g = ModelGroup::new(vec![k]).unwrap();
            assert_eq!(group_cost(&g, &cost).unwrap(), f64::exp2(2.0 * k as f64));
        }
    }

    #[test]
    fn chain_cost_bounded_by_constant_times_top() {
        // For geometric costs, Σ_{ℓ≤k} w_ℓ <= c · w_k with c = 1/(1 - 2^-γ).
        let cost = CostModel::geometric(1.0, 2.0).unwrap();
        let c = 1.0 / (1.0 - 0.25);
        for k in 1..=8usize {
            let g = ModelGroup::range(1, k).unwrap();
            let total = group_cost(&g, &cost).unwrap();
            let top = cost.level_cost(k).unwrap();
            assert!(total <= c * top + 1e-12);
        }
    }

    #[test]
    fn restrict_prolong_examples() {
        let g = ModelGroup::new(vec![1, 3]).unwrap();
        assert_eq!(restrict(&[3.0, 5.0, 7.0], &g), vec![3.0, 7.0]);
        assert_eq!(prolong(&[3.0, 7.0], &g, 3), vec![3.0, 0.0, 7.0]);
    }

    #[test]
    fn identity_submatrix() {
        let eye = Matrix::<f64>::identity(4);
        let g = ModelGroup::new(vec![2, 4]).unwrap();
        let sub = principal_submatrix(&eye, &g);
        assert_eq!(sub, Matrix::<f64>::identity(2));
    }

    #[test]
    fn toy_submatrix_picks_entries() {
        let (family, _) = ExpansionFamily::toy_exp(0);
        let m = family.moments::<f64>();
        let g = ModelGroup::new(vec![2, 4]).unwrap();
        let sub = principal_submatrix(&m.cov, &g);
        assert_eq!(sub[(0, 0)], m.cov[(1, 1)]);
        assert_eq!(sub[(0, 1)], m.cov[(1, 3)]);
        assert_eq!(sub[(1, 0)], m.cov[(3, 1)]);
        assert_eq!(sub[(1, 1)], m.cov[(3, 3)]);
    }

    #[test]
    fn restriction_prolongation_adjoint() {
        // ⟨R u, v_S⟩ = ⟨u, P v_S⟩ for all u, v_S.
        let g = ModelGroup::new(vec![1, 3, 4]).unwrap();
        let u = vec![0.3, -1.0, 2.0, 0.7, 5.0];
        let v_s = vec![1.5, -0.25, 4.0];
        let lhs: f64 = restrict(&u, &g).iter().zip(&v_s).map(|(a, b)| a * b).sum();
        let rhs: f64 = u
            .iter()
            .zip(prolong(&v_s, &g, 5).iter())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn duplicate_groups_rejected() {
        let cost = unit_cost();
        let gs = vec![
            ModelGroup::new(vec![1]).unwrap(),
            ModelGroup::new(vec![1]).unwrap(),
        ];
        assert!(GroupSystem::from_groups(gs, &cost, 2).is_err());
    }
}
