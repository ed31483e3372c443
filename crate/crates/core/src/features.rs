//! World-space features of a design: a kinematic rest pose on flat ground and
//! the padded contact vector the property predictor learns.
//!
//! Layout rules, applied in child-list order:
//! * body components reachable from the root through body components form a
//!   spine along +x, each one placed at its parent's position plus the
//!   parent's length;
//! * any other child of a spine node starts a mount, offset laterally by
//!   ±[`MOUNT_OFFSET`] (sign alternating per mount in preorder);
//! * inside a mount, components hang in the xz-plane starting straight down;
//!   a joint with a bend angle turns everything below it, with the turn
//!   direction alternating along the chain (forward, back, forward, ...);
//! * the pose is shifted so the lowest node touches z = 0.

use crate::grammar::{ComponentClass, DesignGraph, Grammar};

/// Number of (x, y) contact slots in the padded vector.
pub const K_MAX: usize = 8;
/// Length of the padded contact vector.
pub const CONTACT_DIM: usize = 2 * K_MAX;
/// Height below which a leaf counts as touching the ground, meters.
pub const CONTACT_EPS: f64 = 1e-6;
/// Lateral offset of a mount from its spine node, meters.
pub const MOUNT_OFFSET: f64 = 0.12;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("design contains nonterminal symbols")]
    NotTerminalComplete,
}

/// A spine node and the root of one of its mounted subtrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mount {
    pub body: usize,
    pub root: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestPose {
    /// Per-node position in meters, indexed like the input graph.
    pub positions: Vec<[f64; 3]>,
    /// Whether each node belongs to the body spine.
    pub spine: Vec<bool>,
    /// Mounted subtrees in preorder.
    pub mounts: Vec<Mount>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactVector {
    pub values: [f64; CONTACT_DIM],
    /// Number of real contacts stored (at most [`K_MAX`]).
    pub count: usize,
}

impl ContactVector {
    pub fn contacts(&self) -> Vec<[f64; 2]> {
        (0..self.count)
            .map(|k| [self.values[2 * k], self.values[2 * k + 1]])
            .collect()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    /// Rebuilds a padded vector from raw (x, y) pairs, e.g. a dataset line.
    pub fn from_contacts(raw: &[[f64; 2]]) -> Self {
        let mut sorted = raw.to_vec();
        sorted.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        sorted.truncate(K_MAX);
        let mut values = [0.0; CONTACT_DIM];
        for (k, c) in sorted.iter().enumerate() {
            values[2 * k] = c[0];
            values[2 * k + 1] = c[1];
        }
        Self {
            values,
            count: sorted.len(),
        }
    }
}

#[derive(Clone, Copy)]
enum Frame {
    Spine,
    /// Angle from straight down (towards +x) and number of bends so far.
    Chain { angle: f64, bends: u32 },
}

/// Kinematic rest pose. Lays out children in the order given, so pass a
/// canonical graph when the result must not depend on input order.
pub fn rest_pose(g: &DesignGraph, grammar: &Grammar) -> Result<RestPose, FeatureError> {
    if !grammar.is_terminal_complete(g) {
        return Err(FeatureError::NotTerminalComplete);
    }
    let n = g.len();
    let mut positions = vec![[0.0f64; 3]; n];
    let mut spine = vec![false; n];
    let mut mounts = Vec::new();

    let root_frame = if grammar.class(g.node_type(0)) == ComponentClass::Body {
        Frame::Spine
    } else {
        Frame::Chain {
            angle: 0.0,
            bends: 0,
        }
    };
    let mut stack = vec![(0usize, root_frame)];
    while let Some((i, frame)) = stack.pop() {
        let geo = grammar.geometry(g.node_type(i));
        let p = positions[i];
        let mut placed = Vec::with_capacity(g.children(i).len());
        match frame {
            Frame::Spine => {
                spine[i] = true;
                for &c in g.children(i) {
                    if grammar.class(g.node_type(c)) == ComponentClass::Body {
                        positions[c] = [p[0] + geo.length, p[1], p[2]];
                        placed.push((c, Frame::Spine));
                    } else {
                        let side = if mounts.len() % 2 == 0 {
                            MOUNT_OFFSET
                        } else {
                            -MOUNT_OFFSET
                        };
                        mounts.push(Mount { body: i, root: c });
                        positions[c] = [p[0], p[1] + side, p[2]];
                        placed.push((
                            c,
                            Frame::Chain {
                                angle: 0.0,
                                bends: 0,
                            },
                        ));
                    }
                }
            }
            Frame::Chain { angle, bends } => {
                let (angle, bends) = if geo.bend_angle != 0.0 {
                    let sign = if bends % 2 == 0 { 1.0 } else { -1.0 };
                    (angle + sign * geo.bend_angle, bends + 1)
                } else {
                    (angle, bends)
                };
                let tip = [
                    p[0] + geo.length * angle.sin(),
                    p[1],
                    p[2] - geo.length * angle.cos(),
                ];
                for &c in g.children(i) {
                    positions[c] = tip;
                    placed.push((c, Frame::Chain { angle, bends }));
                }
            }
        }
        // preorder: first child processed next
        stack.extend(placed.into_iter().rev());
    }

    let min_z = positions.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
    for p in &mut positions {
        p[2] -= min_z;
    }
    Ok(RestPose {
        positions,
        spine,
        mounts,
    })
}

/// Ground contacts of the canonical form's rest pose, x-sorted (ties by y),
/// truncated to the [`K_MAX`] lowest x and zero padded.
pub fn contact_vector(g: &DesignGraph, grammar: &Grammar) -> Result<ContactVector, FeatureError> {
    let canon = g.canonicalize();
    let pose = rest_pose(&canon, grammar)?;
    Ok(contact_vector_from_pose(&canon, &pose))
}

pub(crate) fn contact_vector_from_pose(g: &DesignGraph, pose: &RestPose) -> ContactVector {
    let raw: Vec<[f64; 2]> = (0..g.len())
        .filter(|&i| g.is_leaf(i) && pose.positions[i][2] <= CONTACT_EPS)
        .map(|i| [pose.positions[i][0], pose.positions[i][1]])
        .collect();
    ContactVector::from_contacts(&raw)
}

/// All ground contacts (not truncated), x-sorted.
pub fn all_contacts(g: &DesignGraph, pose: &RestPose) -> Vec<[f64; 2]> {
    let mut raw: Vec<[f64; 2]> = (0..g.len())
        .filter(|&i| g.is_leaf(i) && pose.positions[i][2] <= CONTACT_EPS)
        .map(|i| [pose.positions[i][0], pose.positions[i][1]])
        .collect();
    raw.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    raw
}
