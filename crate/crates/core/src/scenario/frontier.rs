use std::collections::BTreeMap;

use super::{evaluate_assignment, Assignment, ScenarioError, ScenarioKind, ScenarioSpec};
use crate::exec::Execution;

pub const MAX_FRONTIER_ISSUES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub assignment: BTreeMap<String, String>,
    pub per_role: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    pub max_joint: f64,
    /// Assignments attaining `max_joint`.
    pub joint_maximizers: Vec<BTreeMap<String, String>>,
    /// Pareto-nondominated assignments, sorted by the first role's value
    /// descending.
    pub pareto: Vec<FrontierPoint>,
    pub evaluated: usize,
}

/// Exhaustive enumeration of every complete assignment.
pub fn enumerate_frontier(spec: &ScenarioSpec, exec: Execution) -> Result<Frontier, ScenarioError> {
    if spec.kind != ScenarioKind::Integrative {
        return Err(ScenarioError::UnsupportedKind(spec.id.clone()));
    }
    if spec.issues.len() > MAX_FRONTIER_ISSUES {
        return Err(ScenarioError::TooManyIssues {
            scenario: spec.id.clone(),
            issues: spec.issues.len(),
            max: MAX_FRONTIER_ISSUES,
        });
    }
    let total = spec.assignment_count();
    let values = exec.map_range(total, |i| {
        let assignment = Assignment::Options(spec.assignment_at(i));
        evaluate_assignment(spec, &assignment).map(|v| v.per_role)
    });
    let values = values.into_iter().collect::<Result<Vec<_>, _>>()?;

    let max_joint = values
        .iter()
        .map(|v| v[0] + v[1])
        .fold(f64::NEG_INFINITY, f64::max);
    let joint_maximizers = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v[0] + v[1] == max_joint)
        .map(|(i, _)| spec.assignment_at(i))
        .collect();

    // Sweep in descending first-role value; a point survives when its
    // second-role value beats everything with a strictly larger first value
    // and is the best within its own first-value group.
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        values[b][0]
            .total_cmp(&values[a][0])
            .then(values[b][1].total_cmp(&values[a][1]))
            .then(a.cmp(&b))
    });
    let mut pareto = Vec::new();
    let mut best_second = f64::NEG_INFINITY;
    let mut start = 0;
    while start < order.len() {
        let first = values[order[start]][0];
        let mut end = start;
        while end < order.len() && values[order[end]][0] == first {
            end += 1;
        }
        let group_best = values[order[start]][1];
        if group_best > best_second {
            for &i in &order[start..end] {
                if values[i][1] == group_best {
                    pareto.push(FrontierPoint {
                        assignment: spec.assignment_at(i),
                        per_role: values[i],
                    });
                }
            }
            best_second = group_best;
        }
        start = end;
    }

    Ok(Frontier {
        max_joint,
        joint_maximizers,
        pareto,
        evaluated: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{built_in, IssueOption, IssueSchedule};

    fn brute_force_pareto(points: &[[f64; 2]]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| {
                !points.iter().any(|q| {
                    q[0] >= points[i][0]
                        && q[1] >= points[i][1]
                        && (q[0] > points[i][0] || q[1] > points[i][1])
                })
            })
            .collect()
    }

    #[test]
    fn rental_and_employment_maxima() {
        let rental = enumerate_frontier(&built_in("rental").unwrap(), Execution::Parallel).unwrap();
        assert_eq!(rental.max_joint, 6200.0);
        assert_eq!(rental.evaluated, 625);
        let emp =
            enumerate_frontier(&built_in("employment").unwrap(), Execution::Sequential).unwrap();
        assert_eq!(emp.max_joint, 4800.0);
    }

    #[test]
    fn sweep_matches_quadratic_dominance_check() {
        for id in ["rental", "employment"] {
            let spec = built_in(id).unwrap();
            let frontier = enumerate_frontier(&spec, Execution::Parallel).unwrap();
            let all: Vec<[f64; 2]> = (0..spec.assignment_count())
                .map(|i| {
                    evaluate_assignment(&spec, &Assignment::Options(spec.assignment_at(i)))
                        .unwrap()
                        .per_role
                })
                .collect();
            let expected = brute_force_pareto(&all);
            assert_eq!(frontier.pareto.len(), expected.len(), "{id}");
            for idx in expected {
                assert!(frontier
                    .pareto
                    .iter()
                    .any(|p| p.assignment == spec.assignment_at(idx)));
            }
        }
    }

    #[test]
    fn aligned_single_issue_has_one_point_frontier() {
        let mut spec = built_in("rental").unwrap();
        spec.issues = vec![IssueSchedule {
            name: "color".into(),
            title: "Color".into(),
            options: (0..5)
                .map(|k| IssueOption {
                    label: ["A", "B", "C", "D", "E"][k].into(),
                    term: format!("shade {k}"),
                    points: [("landlord".to_string(), k as i64 * 10), ("tenant".to_string(), k as i64 * 5)]
                        .into_iter()
                        .collect(),
                })
                .collect(),
        }];
        let frontier = enumerate_frontier(&spec, Execution::Sequential).unwrap();
        assert_eq!(frontier.pareto.len(), 1);
        assert_eq!(frontier.pareto[0].assignment["color"], "E");
    }

    #[test]
    fn distributive_is_unsupported() {
        let chair = built_in("chair").unwrap();
        assert!(matches!(
            enumerate_frontier(&chair, Execution::Sequential),
            Err(ScenarioError::UnsupportedKind(_))
        ));
    }
}
