use crate::error::{invalid, Result};

/// Children of `me` in a binary tree over `group_size` ranks rooted at `root`.
///
/// Ranks are rotated so the root sits at relative position 0; relative
/// position `r` has children `2r+1` and `2r+2`.
pub fn bcast_tree_children(root: usize, me: usize, group_size: usize) -> Result<Vec<usize>> {
    check(root, me, group_size)?;
    let rel = (me + group_size - root) % group_size;
    Ok([2 * rel + 1, 2 * rel + 2]
        .into_iter()
        .filter(|&c| c < group_size)
        .map(|c| (c + root) % group_size)
        .collect())
}

/// Parent of `me`, or `None` for the root.
pub fn bcast_tree_parent(root: usize, me: usize, group_size: usize) -> Result<Option<usize>> {
    check(root, me, group_size)?;
    let rel = (me + group_size - root) % group_size;
    Ok((rel > 0).then(|| ((rel - 1) / 2 + root) % group_size))
}

fn check(root: usize, me: usize, group_size: usize) -> Result<()> {
    if root >= group_size || me >= group_size {
        return Err(invalid(format!(
            "ranks {root}, {me} out of range for group of {group_size}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(bcast_tree_children(0, 0, 7).unwrap(), vec![1, 2]);
        assert_eq!(bcast_tree_children(2, 2, 5).unwrap(), vec![3, 4]);
        assert!(bcast_tree_children(0, 3, 7).unwrap().is_empty());
        assert!(bcast_tree_children(5, 0, 5).is_err());
        assert!(bcast_tree_children(0, 7, 7).is_err());
    }

    #[test]
    fn every_non_root_has_one_parent() {
        for g in 1..40 {
            for root in 0..g {
                let mut seen = vec![0; g];
                for me in 0..g {
                    for c in bcast_tree_children(root, me, g).unwrap() {
                        seen[c] += 1;
                        assert_eq!(bcast_tree_parent(root, c, g).unwrap(), Some(me));
                    }
                }
                for (r, &n) in seen.iter().enumerate() {
                    assert_eq!(n, usize::from(r != root), "g={g} root={root} r={r}");
                }
                assert_eq!(bcast_tree_parent(root, root, g).unwrap(), None);
            }
        }
    }
}
