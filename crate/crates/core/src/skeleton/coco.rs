//! The 18-joint COCO layout produced by OpenPose.

pub const NUM_JOINTS: usize = 18;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
];

pub const NECK: usize = 1;

/// Bones as joint index pairs.
pub const BONES: [(usize, usize); 17] = [
    (4, 3),
    (3, 2),
    (7, 6),
    (6, 5),
    (13, 12),
    (12, 11),
    (10, 9),
    (9, 8),
    (11, 5),
    (8, 2),
    (5, 1),
    (2, 1),
    (0, 1),
    (15, 0),
    (14, 0),
    (17, 15),
    (16, 14),
];

/// Index of the joint on the opposite body side (self for midline joints).
pub const MIRROR: [usize; NUM_JOINTS] = [0, 1, 5, 6, 7, 2, 3, 4, 11, 12, 13, 8, 9, 10, 15, 14, 17, 16];

/// Per-joint drawing colours (RGB), one distinct colour per joint.
pub const JOINT_COLORS: [[u8; 3]; NUM_JOINTS] = [
    [255, 0, 0],
    [255, 85, 0],
    [255, 170, 0],
    [255, 255, 0],
    [170, 255, 0],
    [85, 255, 0],
    [0, 255, 0],
    [0, 255, 85],
    [0, 255, 170],
    [0, 255, 255],
    [0, 170, 255],
    [0, 85, 255],
    [0, 0, 255],
    [85, 0, 255],
    [170, 0, 255],
    [255, 0, 255],
    [255, 0, 170],
    [255, 0, 85],
];

/// Symmetric 0/1 adjacency of the bone graph (no self loops), row-major.
pub fn adjacency() -> Vec<f64> {
    let mut a = vec![0.0; NUM_JOINTS * NUM_JOINTS];
    for &(i, j) in &BONES {
        a[i * NUM_JOINTS + j] = 1.0;
        a[j * NUM_JOINTS + i] = 1.0;
    }
    a
}

/// Hop distance between every joint pair over the bone graph (`usize::MAX`
/// when unreachable).
pub fn hop_distances() -> Vec<usize> {
    let n = NUM_JOINTS;
    let adj = adjacency();
    let mut dist = vec![usize::MAX; n * n];
    for src in 0..n {
        dist[src * n + src] = 0;
        let mut frontier = vec![src];
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                for v in 0..n {
                    if adj[u * n + v] > 0.0 && dist[src * n + v] == usize::MAX {
                        dist[src * n + v] = d;
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
    }
    dist
}
