//! Instantiation-independent graph analysis: qualitative reachability
//! classification and the variable-index reduction used by the encoder.

use crate::model::{Direction, Mdp, ParametricMdp, SpecKind, Specification, StateId};
use std::collections::BTreeSet;

/// Scheduler quantifier the classification is computed for.
///
/// `Forall` classifies for the scheduler-maximum check used by `AtMost`
/// probability specs (satisfaction must hold for all schedulers); `Exists`
/// classifies for the scheduler-minimum check used by `AtLeast` specs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantifier {
    Forall,
    Exists,
}

/// Disjoint partition of the state space for a fixed target set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateClassification {
    /// Optimal reachability value is exactly 0.
    pub prob0: BTreeSet<StateId>,
    /// Optimal reachability value is exactly 1 (always contains the targets).
    pub prob1: BTreeSet<StateId>,
    /// Everything else; these keep probability variables.
    pub remaining: BTreeSet<StateId>,
}

/// Successor structure only; probabilities and costs are irrelevant here.
#[derive(Debug, Clone)]
pub struct Adjacency {
    /// `succ[state][action]` lists successor states, ascending.
    pub succ: Vec<Vec<Vec<StateId>>>,
}

impl Adjacency {
    pub fn of_parametric(model: &ParametricMdp) -> Self {
        let succ = model
            .actions
            .iter()
            .map(|acts| {
                acts.iter()
                    .map(|a| a.transitions.iter().map(|(s, _)| *s).collect())
                    .collect()
            })
            .collect();
        Adjacency { succ }
    }

    /// Edges are transitions with strictly positive probability.
    pub fn of_mdp(mdp: &Mdp) -> Self {
        let succ = mdp
            .actions
            .iter()
            .map(|acts| {
                acts.iter()
                    .map(|a| {
                        a.transitions
                            .iter()
                            .filter(|(_, p)| *p > 0.0)
                            .map(|(s, _)| *s)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Adjacency { succ }
    }

    pub fn num_states(&self) -> usize {
        self.succ.len()
    }

    /// Copy with every state in `set` made absorbing.
    fn with_absorbing(&self, set: &[bool]) -> Adjacency {
        let succ = self
            .succ
            .iter()
            .enumerate()
            .map(|(s, acts)| {
                if set[s] {
                    vec![vec![s]]
                } else {
                    acts.clone()
                }
            })
            .collect();
        Adjacency { succ }
    }

    /// States from which some path (any actions) reaches `seeds`.
    fn backward_reach(&self, seeds: &[bool]) -> Vec<bool> {
        let n = self.num_states();
        let mut pred: Vec<Vec<StateId>> = vec![Vec::new(); n];
        for (s, acts) in self.succ.iter().enumerate() {
            for act in acts {
                for &t in act {
                    pred[t].push(s);
                }
            }
        }
        let mut reach = seeds.to_vec();
        let mut queue: Vec<StateId> = (0..n).filter(|&s| seeds[s]).collect();
        while let Some(t) = queue.pop() {
            for &s in &pred[t] {
                if !reach[s] {
                    reach[s] = true;
                    queue.push(s);
                }
            }
        }
        reach
    }
}

/// Computes the probability-0 and probability-1 state sets for reaching
/// `targets`, for the optimum selected by `quantifier`. The result depends
/// only on the transition graph, never on parameter values.
pub fn classify_states(
    model: &ParametricMdp,
    targets: &BTreeSet<StateId>,
    quantifier: Quantifier,
) -> StateClassification {
    classify_adjacency(&Adjacency::of_parametric(model), targets, quantifier)
}

/// Same classification on an instantiated MDP (edges with positive value).
pub fn classify_mdp(
    mdp: &Mdp,
    targets: &BTreeSet<StateId>,
    quantifier: Quantifier,
) -> StateClassification {
    classify_adjacency(&Adjacency::of_mdp(mdp), targets, quantifier)
}

pub fn classify_adjacency(
    adj: &Adjacency,
    targets: &BTreeSet<StateId>,
    quantifier: Quantifier,
) -> StateClassification {
    let n = adj.num_states();
    let mut is_target = vec![false; n];
    for &t in targets {
        is_target[t] = true;
    }
    let (prob0, prob1) = match quantifier {
        Quantifier::Forall => {
            // Maximum over schedulers: value 0 iff no path at all reaches the
            // targets; value 1 via the standard double fixed point.
            let reach = adj.backward_reach(&is_target);
            let prob0: Vec<bool> = reach.iter().map(|r| !r).collect();
            let prob1 = almost_sure_exists(adj, &is_target);
            (prob0, prob1)
        }
        Quantifier::Exists => {
            // Minimum over schedulers: value 0 iff some scheduler can stay
            // outside the targets forever; value 1 iff no path, with targets
            // absorbing, reaches that avoid set.
            let avoid = min_prob0(adj, &is_target);
            let absorbing = adj.with_absorbing(&is_target);
            let reach_avoid = absorbing.backward_reach(&avoid);
            let prob1: Vec<bool> = reach_avoid.iter().map(|r| !r).collect();
            (avoid, prob1)
        }
    };
    let mut class = StateClassification {
        prob0: BTreeSet::new(),
        prob1: BTreeSet::new(),
        remaining: BTreeSet::new(),
    };
    for s in 0..n {
        if prob0[s] {
            class.prob0.insert(s);
        } else if prob1[s] {
            class.prob1.insert(s);
        } else {
            class.remaining.insert(s);
        }
    }
    class
}

/// Greatest set of non-target states from which some action keeps all mass
/// inside the set; from these a scheduler avoids the targets with certainty.
fn min_prob0(adj: &Adjacency, is_target: &[bool]) -> Vec<bool> {
    let n = adj.num_states();
    let mut inside: Vec<bool> = (0..n).map(|s| !is_target[s]).collect();
    loop {
        let mut changed = false;
        for s in 0..n {
            if !inside[s] {
                continue;
            }
            let keeps = adj.succ[s]
                .iter()
                .any(|act| act.iter().all(|&t| inside[t]));
            if !keeps {
                inside[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    inside
}

/// States where some scheduler reaches the targets almost surely (which is
/// exactly where the scheduler maximum equals 1). Double fixed point: the
/// outer set shrinks to states that never leave the candidate region while
/// retaining a path to the targets inside it.
fn almost_sure_exists(adj: &Adjacency, is_target: &[bool]) -> Vec<bool> {
    let n = adj.num_states();
    let mut outer = vec![true; n];
    loop {
        // Inner least fixed point within `outer`.
        let mut inner: Vec<bool> = is_target.to_vec();
        loop {
            let mut changed = false;
            for s in 0..n {
                if inner[s] || !outer[s] || is_target[s] {
                    continue;
                }
                let ok = adj.succ[s].iter().any(|act| {
                    act.iter().all(|&t| outer[t]) && act.iter().any(|&t| inner[t])
                });
                if ok {
                    inner[s] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if inner == outer {
            return outer;
        }
        outer = inner;
    }
}

/// Fixed outcome detected purely from the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrivialStatus {
    /// Any graph-preserving valuation satisfies the spec.
    Feasible,
    /// No valuation can satisfy the spec.
    Infeasible,
}

/// Variable-index reduction: which states keep probability variables and what
/// constants replace the classified ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedIndexing {
    /// States with a probability variable, ascending; position = variable slot.
    pub prob_states: Vec<StateId>,
    /// State to variable slot.
    pub index_of_state: Vec<Option<usize>>,
    /// State to substituted constant where classified away.
    pub substituted: Vec<Option<f64>>,
    /// Set when the initial state itself is substituted.
    pub trivial: Option<TrivialStatus>,
}

impl ReducedIndexing {
    pub fn num_vars(&self) -> usize {
        self.prob_states.len()
    }
}

/// Builds the reduction for `spec`:
/// reachability substitutes prob0 states by 0 and prob1 states (including the
/// targets) by 1; expected cost gives every non-goal state a variable and
/// substitutes goals by 0.
pub fn simplify_for_encoding(
    model: &ParametricMdp,
    spec: &Specification,
    classification: &StateClassification,
) -> ReducedIndexing {
    let n = model.num_states;
    let mut substituted: Vec<Option<f64>> = vec![None; n];
    match spec.kind {
        SpecKind::ReachProbability => {
            for &s in &classification.prob0 {
                substituted[s] = Some(0.0);
            }
            for &s in &classification.prob1 {
                substituted[s] = Some(1.0);
            }
        }
        SpecKind::ExpectedCost => {
            for &s in &spec.target_set {
                substituted[s] = Some(0.0);
            }
        }
    }
    let mut prob_states = Vec::new();
    let mut index_of_state = vec![None; n];
    for s in 0..n {
        if substituted[s].is_none() {
            index_of_state[s] = Some(prob_states.len());
            prob_states.push(s);
        }
    }
    let trivial = substituted[model.initial].map(|value| trivial_status(spec, value));
    ReducedIndexing {
        prob_states,
        index_of_state,
        substituted,
        trivial,
    }
}

/// Outcome when the initial state's value is a known constant.
fn trivial_status(spec: &Specification, value: f64) -> TrivialStatus {
    let sat = match spec.direction {
        Direction::AtMost => value <= spec.threshold,
        Direction::AtLeast => value >= spec.threshold,
    };
    if sat {
        TrivialStatus::Feasible
    } else {
        TrivialStatus::Infeasible
    }
}
