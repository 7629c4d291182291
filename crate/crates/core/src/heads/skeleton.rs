/// Joint names of the desk skeleton, in channel order.
pub const DESK_JOINTS: [&str; 14] = [
    "head",
    "neck",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];
pub const DESK_K: usize = DESK_JOINTS.len();

/// Left/right joint pairs exchanged by a horizontal flip.
pub const DESK_FLIP_PAIRS: [(usize, usize); 6] = [(2, 3), (4, 5), (6, 7), (8, 9), (10, 11), (12, 13)];

/// Part classes; index 0 is background.
pub const PART_CLASSES: [&str; 8] = [
    "background",
    "head",
    "torso",
    "upper_arms",
    "lower_arms",
    "upper_legs",
    "lower_legs",
    "hands_feet",
];
pub const PART_C: usize = PART_CLASSES.len();

/// `perm[k]` is the channel that joint `k` becomes after a horizontal flip.
pub fn flip_permutation(k: usize, pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..k).collect();
    for &(a, b) in pairs {
        perm.swap(a, b);
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_is_involution() {
        let p = flip_permutation(DESK_K, &DESK_FLIP_PAIRS);
        for k in 0..DESK_K {
            assert_eq!(p[p[k]], k);
            if p[k] != k {
                let (a, b) = (DESK_JOINTS[k], DESK_JOINTS[p[k]]);
                assert_eq!(a.replace("left", "right"), b.replace("left", "right"));
            }
        }
    }
}
