//! The default 14-joint skeleton (LSP joint naming and order).

pub const JOINT_COUNT: usize = 14;

pub const R_ANKLE: usize = 0;
pub const R_KNEE: usize = 1;
pub const R_HIP: usize = 2;
pub const L_HIP: usize = 3;
pub const L_KNEE: usize = 4;
pub const L_ANKLE: usize = 5;
pub const R_WRIST: usize = 6;
pub const R_ELBOW: usize = 7;
pub const R_SHOULDER: usize = 8;
pub const L_SHOULDER: usize = 9;
pub const L_ELBOW: usize = 10;
pub const L_WRIST: usize = 11;
pub const NECK: usize = 12;
pub const HEAD: usize = 13;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "r_ankle",
    "r_knee",
    "r_hip",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_wrist",
    "r_elbow",
    "r_shoulder",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "neck",
    "head",
];

/// Kinematic tree: 13 edges rooted at the neck.
pub const TREE_EDGES: [(usize, usize); JOINT_COUNT - 1] = [
    (HEAD, NECK),
    (NECK, R_SHOULDER),
    (R_SHOULDER, R_ELBOW),
    (R_ELBOW, R_WRIST),
    (NECK, L_SHOULDER),
    (L_SHOULDER, L_ELBOW),
    (L_ELBOW, L_WRIST),
    (NECK, R_HIP),
    (R_HIP, R_KNEE),
    (R_KNEE, R_ANKLE),
    (NECK, L_HIP),
    (L_HIP, L_KNEE),
    (L_KNEE, L_ANKLE),
];

/// Limb groups reported by PCP, in report column order.
pub const LIMB_GROUPS: [(&str, &[(usize, usize)]); 6] = [
    ("Torso", &[(NECK, R_HIP), (NECK, L_HIP)]),
    ("Head", &[(HEAD, NECK)]),
    ("U.arms", &[(R_SHOULDER, R_ELBOW), (L_SHOULDER, L_ELBOW)]),
    ("L.arms", &[(R_ELBOW, R_WRIST), (L_ELBOW, L_WRIST)]),
    ("U.legs", &[(R_HIP, R_KNEE), (L_HIP, L_KNEE)]),
    ("L.legs", &[(R_KNEE, R_ANKLE), (L_KNEE, L_ANKLE)]),
];

/// All PCP limbs, flattened from [`LIMB_GROUPS`].
pub fn limbs() -> Vec<(usize, usize)> {
    LIMB_GROUPS.iter().flat_map(|(_, l)| l.iter().copied()).collect()
}
