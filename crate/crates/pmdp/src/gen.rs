//! Built-in benchmark model families.

use crate::model::{ActionDef, AffineExpr, ParametricMdp, Rational, StateId};
use num_traits::{One, Zero};
use std::collections::{BTreeMap, BTreeSet};

/// Parametric gridworld chain: a `width x height` grid walked from the
/// bottom-left corner, moving right until the last column and then up, toward
/// the goal in the top-right corner; the trap sits in the top-left corner.
/// Cells with `(x + 3y) % 7 == 0` are hazardous: leaving one succeeds with
/// the probability parameter of the cell's region (5 columns by 2 rows per
/// region) and falls into the trap otherwise. Every state has a single
/// action, so the model is a pMC; a 25 by 20 grid yields 500 states and 50
/// parameters.
///
/// States are numbered `y * width + x`; labels `goal` and `trap` mark the two
/// absorbing cells.
pub fn gridworld(width: usize, height: usize) -> ParametricMdp {
    assert!(width >= 2 && height >= 2);
    let id = |x: usize, y: usize| -> StateId { y * width + x };
    let goal = id(width - 1, height - 1);
    let trap = id(0, height - 1);
    let region_cols = width.div_ceil(5);
    let region = |x: usize, y: usize| (x / 5) + region_cols * (y / 2);
    let num_params = region_cols * height.div_ceil(2);
    let param_names: Vec<String> = (0..num_params).map(|r| format!("v{r}")).collect();

    let mut actions: Vec<Vec<ActionDef>> = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let s = id(x, y);
            if s == goal || s == trap {
                actions.push(vec![ActionDef {
                    name: "stay".to_string(),
                    cost: Rational::zero(),
                    transitions: vec![(s, AffineExpr::constant(Rational::one()))],
                }]);
                continue;
            }
            // Right-then-up walk; the trap is never a movement target because
            // column 0 moves right and only the last column moves up.
            let target = if x + 1 < width { id(x + 1, y) } else { id(x, y + 1) };
            debug_assert_ne!(target, trap);
            let transitions = if (x + 3 * y) % 7 == 0 {
                let succeed = AffineExpr::term(Rational::one(), region(x, y));
                let mut fail = AffineExpr::constant(Rational::one());
                fail.sub_assign(&succeed);
                let mut t = vec![(trap, fail), (target, succeed)];
                t.sort_by_key(|(succ, _)| *succ);
                t
            } else {
                vec![(target, AffineExpr::constant(Rational::one()))]
            };
            actions.push(vec![ActionDef {
                name: "move".to_string(),
                cost: Rational::zero(),
                transitions,
            }]);
        }
    }

    let mut labels = BTreeMap::new();
    labels.insert("goal".to_string(), BTreeSet::from([goal]));
    labels.insert("trap".to_string(), BTreeSet::from([trap]));
    ParametricMdp {
        param_names,
        num_states: width * height,
        initial: id(0, 0),
        actions,
        labels,
        has_costs: false,
    }
}
