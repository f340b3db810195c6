use std::f64::consts::PI;

use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Vertex count of the default template, matching the SMPL mesh.
pub const DEFAULT_VERTICES: usize = 6890;
/// Joint count of the default template (SMPL body joints).
pub const DEFAULT_JOINTS: usize = 24;

const SUM_TOL: f64 = 1e-9;

/// Fraction of a bone over which skin weights blend towards the parent joint.
const BLEND_SPAN: f64 = 0.3;

/// Fixed skinned body structure: rest geometry, kinematic tree, skinning
/// weights, part segmentation and joint regressor.
///
/// Bone `j` is the segment that starts at joint `j` and runs towards the
/// mean of its children (or extends away from the parent for leaves). Its
/// vertices are driven mainly by joint `j`. Parts coincide with bones.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyTemplate {
    pub rest_vertices: Vec<Vector3<f64>>,
    pub rest_joints: Vec<Vector3<f64>>,
    /// `parent[0]` is `None`; every other parent precedes its child.
    pub parent: Vec<Option<usize>>,
    /// `V x J`, rows sum to one.
    pub skin_weights: Array2<f64>,
    pub part_map: Vec<usize>,
    pub foot_vertex_ids: Vec<usize>,
    /// `J x V`, rows sum to one.
    pub joint_regressor: Array2<f64>,
}

impl BodyTemplate {
    pub fn num_vertices(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.rest_joints.len()
    }

    /// One part per joint.
    pub fn num_parts(&self) -> usize {
        self.num_joints()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.num_vertices();
        let j = self.num_joints();
        if j == 0 || v == 0 {
            return Err(Error::arg("template needs at least one joint and one vertex"));
        }
        if self.parent.len() != j {
            return Err(Error::arg("parent list length differs from joint count"));
        }
        if self.parent[0].is_some() {
            return Err(Error::arg("joint 0 must be the root"));
        }
        for (k, p) in self.parent.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < k => {}
                _ => {
                    return Err(Error::arg(format!(
                        "joint {k} must have a parent with a smaller index"
                    )))
                }
            }
        }
        if self.skin_weights.dim() != (v, j) {
            return Err(Error::arg("skin weight matrix must be V x J"));
        }
        for (i, row) in self.skin_weights.rows().into_iter().enumerate() {
            if row.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::arg(format!("skin weights of vertex {i} must be nonnegative")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(Error::arg(format!("skin weights of vertex {i} sum to {s}")));
            }
        }
        if self.joint_regressor.dim() != (j, v) {
            return Err(Error::arg("joint regressor must be J x V"));
        }
        for (k, row) in self.joint_regressor.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(Error::arg(format!("regressor row {k} sums to {s}")));
            }
        }
        if self.part_map.len() != v || self.part_map.iter().any(|&p| p >= self.num_parts()) {
            return Err(Error::arg("every vertex needs a part index below the part count"));
        }
        if self.foot_vertex_ids.iter().any(|&i| i >= v) {
            return Err(Error::arg("foot vertex index out of range"));
        }
        if self
            .rest_vertices
            .iter()
            .chain(&self.rest_joints)
            .any(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::arg("rest geometry must be finite"));
        }
        Ok(())
    }
}

/// SMPL-like skeleton, z up, body facing +y, heights in metres.
const SMPL_PARENTS: [i32; 24] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];
const SMPL_REST: [[f64; 3]; 24] = [
    [0.0, 0.0, 0.95],
    [0.09, 0.0, 0.88],
    [-0.09, 0.0, 0.88],
    [0.0, 0.0, 1.06],
    [0.10, 0.0, 0.50],
    [-0.10, 0.0, 0.50],
    [0.0, 0.0, 1.19],
    [0.11, 0.0, 0.09],
    [-0.11, 0.0, 0.09],
    [0.0, 0.0, 1.25],
    [0.12, 0.12, 0.03],
    [-0.12, 0.12, 0.03],
    [0.0, 0.0, 1.48],
    [0.08, 0.0, 1.39],
    [-0.08, 0.0, 1.39],
    [0.0, 0.02, 1.60],
    [0.18, 0.0, 1.40],
    [-0.18, 0.0, 1.40],
    [0.44, 0.0, 1.40],
    [-0.44, 0.0, 1.40],
    [0.69, 0.0, 1.40],
    [-0.69, 0.0, 1.40],
    [0.77, 0.0, 1.40],
    [-0.77, 0.0, 1.40],
];

/// Default body: 24 joints, 287 vertices per bone padded to 6890.
pub fn default_template(seed: u64) -> Result<BodyTemplate> {
    build_template_padded(287, DEFAULT_JOINTS, DEFAULT_VERTICES, seed)
}

/// Procedural template with exactly `joints * v_per_bone` vertices.
pub fn build_template(v_per_bone: usize, joints: usize, seed: u64) -> Result<BodyTemplate> {
    let total = v_per_bone
        .checked_mul(joints)
        .ok_or_else(|| Error::arg("vertex count overflows"))?;
    build_template_padded(v_per_bone, joints, total, seed)
}

/// Procedural template; vertices beyond `joints * v_per_bone` are handed
/// out round-robin starting at the root bone.
pub fn build_template_padded(
    v_per_bone: usize,
    joints: usize,
    total_vertices: usize,
    seed: u64,
) -> Result<BodyTemplate> {
    if v_per_bone < 1 {
        return Err(Error::arg("v_per_bone must be at least 1"));
    }
    if joints < 2 {
        return Err(Error::arg("a template needs at least 2 joints"));
    }
    let base = v_per_bone * joints;
    if total_vertices < base {
        return Err(Error::arg(format!(
            "total vertex count {total_vertices} below {joints} x {v_per_bone}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (parent, rest_joints) = if joints == DEFAULT_JOINTS {
        smpl_skeleton()
    } else {
        random_skeleton(joints, &mut rng)
    };

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); joints];
    for (k, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(k);
        }
    }

    // bone of each vertex, in generation order
    let mut owner: Vec<usize> = (0..joints).flat_map(|j| std::iter::repeat_n(j, v_per_bone)).collect();
    owner.extend((0..total_vertices - base).map(|i| i % joints));
    let mut per_bone = vec![0usize; joints];
    for &b in &owner {
        per_bone[b] += 1;
    }

    let mut rest_vertices = Vec::with_capacity(total_vertices);
    let mut seg_param = Vec::with_capacity(total_vertices);
    let mut next_slot = vec![0usize; joints];
    for &b in &owner {
        let head = rest_joints[b];
        let tip = bone_tip(b, &parent, &children, &rest_joints);
        let axis = tip - head;
        let len = axis.norm().max(1e-3);
        let (e1, e2) = perpendicular_basis(&axis);
        let slot = next_slot[b];
        next_slot[b] += 1;
        let s = (slot as f64 + 0.5) / per_bone[b] as f64;
        let radius = (0.25 * len).clamp(0.02, 0.10) * rng.random_range(0.8..1.0);
        let phi = rng.random_range(0.0..2.0 * PI);
        rest_vertices.push(head + axis * s + (e1 * phi.cos() + e2 * phi.sin()) * radius);
        seg_param.push(s);
    }

    let v = total_vertices;
    let mut skin_weights = Array2::<f64>::zeros((v, joints));
    for (i, (&b, &s)) in owner.iter().zip(&seg_param).enumerate() {
        match parent[b] {
            None => skin_weights[[i, b]] = 1.0,
            Some(p) => {
                // own weight stays in [0.5, 1] so that 1 - own is exact
                let own = 0.5 + 0.5 * (s / BLEND_SPAN).min(1.0);
                skin_weights[[i, b]] = own;
                skin_weights[[i, p]] = 1.0 - own;
            }
        }
    }

    let mut joint_regressor = Array2::<f64>::zeros((joints, v));
    for j in 0..joints {
        let near: Vec<usize> = (0..v).filter(|&i| owner[i] == j && seg_param[i] < 0.34).collect();
        let support = if near.is_empty() {
            (0..v).filter(|&i| owner[i] == j).collect()
        } else {
            near
        };
        let w = 1.0 / support.len() as f64;
        for i in support {
            joint_regressor[[j, i]] = w;
        }
    }

    let feet = lowest_leaf_bones(&parent, &children, &rest_joints);
    let foot_vertex_ids = (0..v).filter(|&i| feet.contains(&owner[i])).collect();

    let template = BodyTemplate {
        rest_vertices,
        rest_joints,
        parent,
        skin_weights,
        part_map: owner,
        foot_vertex_ids,
        joint_regressor,
    };
    template.validate()?;
    Ok(template)
}

fn smpl_skeleton() -> (Vec<Option<usize>>, Vec<Vector3<f64>>) {
    let parent = SMPL_PARENTS
        .iter()
        .map(|&p| usize::try_from(p).ok())
        .collect();
    let joints = SMPL_REST.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
    (parent, joints)
}

fn random_skeleton(joints: usize, rng: &mut ChaCha8Rng) -> (Vec<Option<usize>>, Vec<Vector3<f64>>) {
    let mut parent = vec![None];
    let mut pos = vec![Vector3::new(0.0, 0.0, 1.0)];
    for k in 1..joints {
        let lo = k.saturating_sub(3);
        let p = rng.random_range(lo..k);
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..0.5),
        )
        .try_normalize(1e-9)
        .unwrap_or_else(|| Vector3::new(0.0, 0.0, -1.0));
        let len = rng.random_range(0.1..0.3);
        parent.push(Some(p));
        pos.push(pos[p] + dir * len);
    }
    (parent, pos)
}

fn bone_tip(
    b: usize,
    parent: &[Option<usize>],
    children: &[Vec<usize>],
    joints: &[Vector3<f64>],
) -> Vector3<f64> {
    if !children[b].is_empty() {
        let sum: Vector3<f64> = children[b].iter().map(|&c| joints[c]).sum();
        sum / children[b].len() as f64
    } else {
        let p = parent[b].expect("leaf bones always have a parent");
        joints[b] + (joints[b] - joints[p]) * 0.5
    }
}

fn perpendicular_basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let d = axis.try_normalize(1e-12).unwrap_or_else(Vector3::z);
    let helper = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = d.cross(&helper).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

/// Two lowest leaf bones by rest height; falls back to the lowest remaining
/// bones when the tree has a single leaf.
fn lowest_leaf_bones(
    parent: &[Option<usize>],
    children: &[Vec<usize>],
    joints: &[Vector3<f64>],
) -> Vec<usize> {
    let by_height = |a: &usize, b: &usize| joints[*a].z.total_cmp(&joints[*b].z).then(a.cmp(b));
    let mut leaves: Vec<usize> = (0..joints.len()).filter(|&j| children[j].is_empty()).collect();
    leaves.sort_by(by_height);
    leaves.truncate(2);
    if leaves.len() < 2 {
        let mut rest: Vec<usize> = (0..joints.len())
            .filter(|j| !leaves.contains(j) && parent[*j].is_some())
            .collect();
        rest.sort_by(by_height);
        leaves.extend(rest.into_iter().take(2 - leaves.len()));
    }
    leaves
}
