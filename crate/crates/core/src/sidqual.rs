//! Semantic-ID quality: codebook underutilization rate, cardinality and
//! conflict rate, reported for the full catalog and for the test items.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{FusidError, Result};
use crate::pq::SemanticId;
use crate::TrackId;

/// Percentage of the `n·k` codebook entries that no SID in `sids` uses.
pub fn cur<'a>(sids: impl IntoIterator<Item = &'a SemanticId>, n: usize, k: usize) -> Result<f64> {
    if n == 0 || k == 0 {
        return Err(FusidError::InvalidConfig("cur needs n >= 1 and k >= 1".into()));
    }
    let mut used = vec![false; n * k];
    for sid in sids {
        if sid.len() != n {
            return Err(FusidError::DimensionMismatch {
                what: "semantic id length".into(),
                expected: n,
                actual: sid.len(),
            });
        }
        for (pos, &code) in sid.codes().iter().enumerate() {
            let code = code as usize;
            if code >= k {
                return Err(FusidError::InvalidConfig(format!(
                    "code {code} at position {pos} out of range for k={k}"
                )));
            }
            used[pos * k + code] = true;
        }
    }
    let unused = used.iter().filter(|u| !**u).count();
    Ok(100.0 * unused as f64 / (n * k) as f64)
}

/// Number of distinct SIDs.
pub fn cardinality<'a>(sids: impl IntoIterator<Item = &'a SemanticId>) -> usize {
    sids.into_iter().collect::<HashSet<_>>().len()
}

/// How colliding items are counted by [`conflict_rate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictCounting {
    /// Every member of a group sharing one SID counts.
    #[default]
    AllMembers,
    /// Only the members beyond the first of each group count.
    BeyondFirst,
}

/// Percentage of items whose SID is shared with at least one other item.
pub fn conflict_rate<'a>(sids: impl IntoIterator<Item = &'a SemanticId>) -> Result<f64> {
    conflict_rate_with(sids, ConflictCounting::AllMembers)
}

pub fn conflict_rate_with<'a>(
    sids: impl IntoIterator<Item = &'a SemanticId>,
    counting: ConflictCounting,
) -> Result<f64> {
    let mut groups: HashMap<&SemanticId, usize> = HashMap::new();
    let mut total = 0usize;
    for sid in sids {
        *groups.entry(sid).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(FusidError::UndefinedMetric("conflict rate of an empty collection".into()));
    }
    let conflicting: usize = groups
        .values()
        .filter(|&&size| size >= 2)
        .map(|&size| match counting {
            ConflictCounting::AllMembers => size,
            ConflictCounting::BeyondFirst => size - 1,
        })
        .sum();
    Ok(100.0 * conflicting as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllTest<T> {
    pub all: T,
    pub test: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardinalityColumns {
    pub all: usize,
    pub test: usize,
    pub max_all: usize,
    pub max_test: usize,
}

/// Semantic-ID quality for the full catalog and the test subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidQualityReport {
    pub cur: AllTest<f64>,
    pub cardinality: CardinalityColumns,
    pub conflict_rate: AllTest<f64>,
}

/// Computes the report. Test-set CUR is measured against the whole `n·k` codebook.
pub fn report(
    sids_all: &BTreeMap<TrackId, SemanticId>,
    sids_test: &BTreeMap<TrackId, SemanticId>,
    n: usize,
    k: usize,
) -> Result<SidQualityReport> {
    for (id, sid) in sids_test {
        if sids_all.get(id) != Some(sid) {
            return Err(FusidError::SubsetViolation(*id));
        }
    }
    Ok(SidQualityReport {
        cur: AllTest {
            all: cur(sids_all.values(), n, k)?,
            test: cur(sids_test.values(), n, k)?,
        },
        cardinality: CardinalityColumns {
            all: cardinality(sids_all.values()),
            test: cardinality(sids_test.values()),
            max_all: sids_all.len(),
            max_test: sids_test.len(),
        },
        conflict_rate: AllTest {
            all: conflict_rate(sids_all.values())?,
            test: conflict_rate(sids_test.values())?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(codes: &[u32]) -> SemanticId {
        SemanticId(codes.to_vec())
    }

    #[test]
    fn cur_examples() {
        let s = [sid(&[0]), sid(&[1]), sid(&[2])];
        assert_eq!(cur(&s, 1, 4).unwrap(), 25.0);
        let s = [sid(&[0]), sid(&[1]), sid(&[2]), sid(&[3])];
        assert_eq!(cur(&s, 1, 4).unwrap(), 0.0);
        let s = [sid(&[0, 0]), sid(&[1, 1]), sid(&[2, 0]), sid(&[3, 1])];
        assert_eq!(cur(&s, 2, 4).unwrap(), 25.0);
    }

    #[test]
    fn cur_rejects_out_of_range_codes() {
        assert!(cur(&[sid(&[4])], 1, 4).is_err());
        assert!(cur(&[sid(&[0, 0])], 1, 4).is_err());
    }

    #[test]
    fn cardinality_examples() {
        let a = sid(&[1, 2]);
        assert_eq!(cardinality(&[a.clone(), a.clone(), sid(&[3, 3]), sid(&[4, 4])]), 3);
        assert_eq!(cardinality(&[]), 0);
        let distinct: Vec<SemanticId> = (0..537_042u32).map(|i| sid(&[i % 1024, i / 1024])).collect();
        assert_eq!(cardinality(&distinct), 537_042);
    }

    #[test]
    fn conflict_examples() {
        let a = sid(&[1]);
        let s = [a.clone(), a.clone(), sid(&[2]), sid(&[3])];
        assert_eq!(conflict_rate(&s).unwrap(), 50.0);
        assert_eq!(conflict_rate_with(&s, ConflictCounting::BeyondFirst).unwrap(), 25.0);
        assert_eq!(conflict_rate(&[sid(&[1]), sid(&[2])]).unwrap(), 0.0);
        assert_eq!(conflict_rate(&vec![a; 5]).unwrap(), 100.0);
        assert!(conflict_rate(&[]).is_err());
    }

    #[test]
    fn report_on_fixture() {
        let all: BTreeMap<TrackId, SemanticId> = [
            (1, sid(&[0, 0])),
            (2, sid(&[0, 0])),
            (3, sid(&[1, 2])),
            (4, sid(&[3, 1])),
        ]
        .into();
        let test: BTreeMap<TrackId, SemanticId> = [(2, sid(&[0, 0])), (3, sid(&[1, 2]))].into();
        let r = report(&all, &test, 2, 4).unwrap();
        // used entries: pos0 {0,1,3}, pos1 {0,2,1} -> 2 of 8 unused
        assert_eq!(r.cur.all, 25.0);
        // test uses pos0 {0,1}, pos1 {0,2} -> 4 of 8 unused
        assert_eq!(r.cur.test, 50.0);
        assert_eq!(
            r.cardinality,
            CardinalityColumns { all: 3, test: 2, max_all: 4, max_test: 2 }
        );
        assert_eq!(r.conflict_rate.all, 50.0);
        assert_eq!(r.conflict_rate.test, 0.0);
    }

    #[test]
    fn test_equal_to_all_mirrors_columns() {
        let all: BTreeMap<TrackId, SemanticId> = [(1, sid(&[0])), (2, sid(&[1]))].into();
        let r = report(&all, &all, 1, 3).unwrap();
        assert_eq!(r.cur.all, r.cur.test);
        assert_eq!(r.cardinality.all, r.cardinality.test);
        assert_eq!(r.conflict_rate.all, r.conflict_rate.test);
    }

    #[test]
    fn disjoint_test_set_is_rejected() {
        let all: BTreeMap<TrackId, SemanticId> = [(1, sid(&[0]))].into();
        let test: BTreeMap<TrackId, SemanticId> = [(9, sid(&[0]))].into();
        assert!(matches!(report(&all, &test, 1, 2), Err(FusidError::SubsetViolation(9))));
    }

    #[test]
    fn report_json_shape() {
        let all: BTreeMap<TrackId, SemanticId> = [(1, sid(&[0])), (2, sid(&[1]))].into();
        let r = report(&all, &all, 1, 2).unwrap();
        let v = serde_json::to_value(r).unwrap();
        for key in ["/cur/all", "/cur/test", "/cardinality/max_all", "/cardinality/max_test", "/conflict_rate/test"] {
            assert!(v.pointer(key).is_some(), "{key}");
        }
    }
}
