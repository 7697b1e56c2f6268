//! Continuous Lagrange finite-element spaces.
//!
//! Supported: P1, P2, P3 on intervals; P1, P2 on triangles. The 1D element
//! nodes sit at Gauss-Lobatto points so the nodal quadrature doubles as an
//! order-preserving lumped mass.

use std::collections::HashMap;
use std::sync::Arc;

use super::quadrature::gauss_lobatto;
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh};

#[derive(Debug, Clone)]
pub struct FeSpace {
    pub mesh: Arc<Mesh>,
    pub order: usize,
    pub n_dofs: usize,
    pub dof_coords: Vec<[f64; 2]>,
    /// True on DOFs constrained by a Dirichlet boundary facet.
    pub dirichlet: Vec<bool>,
    pub dofs_per_elem: usize,
    elem_dofs: Vec<usize>,
    /// Per boundary facet (parallel to `mesh.boundary`): the DOFs on that
    /// facet, ordered [first vertex, (interior trace nodes...), last vertex]
    /// in 1D-trace node order matching `trace_nodes()`.
    pub facet_dofs: Vec<Vec<usize>>,
    /// Element adjacent to each boundary facet.
    pub facet_elem: Vec<usize>,
}

impl FeSpace {
    pub fn element_dofs(&self, e: usize) -> &[usize] {
        &self.elem_dofs[e * self.dofs_per_elem..(e + 1) * self.dofs_per_elem]
    }

    pub fn n_free(&self) -> usize {
        self.dirichlet.iter().filter(|d| !**d).count()
    }

    /// Parametric trace nodes on a boundary facet, matching `facet_dofs`.
    pub fn trace_nodes(&self) -> Vec<f64> {
        if self.mesh.dim == 1 {
            vec![0.0]
        } else {
            match self.order {
                1 => vec![0.0, 1.0],
                2 => vec![0.0, 1.0, 0.5],
                _ => unreachable!(),
            }
        }
    }

    pub fn has_tag(&self, tag: BoundaryTag) -> bool {
        self.mesh.boundary.iter().any(|f| f.tag == tag)
    }
}

/// Build the Lagrange space of the given order on the mesh.
pub fn build_space(mesh: &Arc<Mesh>, order: usize) -> Result<FeSpace> {
    match (mesh.dim, order) {
        (1, 1..=3) => build_1d(mesh, order),
        (2, 1..=2) => build_2d(mesh, order),
        (d, r) => Err(Error::Unsupported(format!(
            "order {r} elements in {d}D are not supported"
        ))),
    }
}

fn build_1d(mesh: &Arc<Mesh>, r: usize) -> Result<FeSpace> {
    let nv = mesh.n_vertices();
    let ne = mesh.n_elements();
    let n_interior = r - 1;
    let n_dofs = nv + ne * n_interior;
    let (nodes, _) = gauss_lobatto(r);

    let mut dof_coords = vec![[0.0, 0.0]; n_dofs];
    for (i, v) in mesh.vertices.iter().enumerate() {
        dof_coords[i] = *v;
    }
    let mut elem_dofs = Vec::with_capacity(ne * (r + 1));
    for e in 0..ne {
        let [a, b, _] = mesh.elements[e];
        let (xa, xb) = (mesh.vertices[a][0], mesh.vertices[b][0]);
        elem_dofs.push(a);
        for j in 0..n_interior {
            let dof = nv + e * n_interior + j;
            let t = nodes[j + 1];
            dof_coords[dof] = [xa + t * (xb - xa), 0.0];
            elem_dofs.push(dof);
        }
        elem_dofs.push(b);
    }

    let mut dirichlet = vec![false; n_dofs];
    let mut facet_dofs = Vec::with_capacity(mesh.boundary.len());
    let mut facet_elem = Vec::with_capacity(mesh.boundary.len());
    for f in &mesh.boundary {
        let v = f.vertices[0];
        if f.tag == BoundaryTag::Dirichlet {
            dirichlet[v] = true;
        }
        facet_dofs.push(vec![v]);
        let e = mesh
            .elements
            .iter()
            .position(|el| el[0] == v || el[1] == v)
            .ok_or_else(|| Error::invalid("boundary vertex not in any element"))?;
        facet_elem.push(e);
    }

    Ok(FeSpace {
        mesh: mesh.clone(),
        order: r,
        n_dofs,
        dof_coords,
        dirichlet,
        dofs_per_elem: r + 1,
        elem_dofs,
        facet_dofs,
        facet_elem,
    })
}

fn build_2d(mesh: &Arc<Mesh>, r: usize) -> Result<FeSpace> {
    let nv = mesh.n_vertices();
    let ne = mesh.n_elements();

    // Edge enumeration for P2 midpoints.
    let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
    if r == 2 {
        for el in &mesh.elements {
            for (a, b) in [(el[0], el[1]), (el[1], el[2]), (el[2], el[0])] {
                let key = (a.min(b), a.max(b));
                let next = edge_ids.len();
                edge_ids.entry(key).or_insert(next);
            }
        }
    }
    let n_dofs = nv + edge_ids.len();
    let dofs_per_elem = if r == 1 { 3 } else { 6 };

    let mut dof_coords = vec![[0.0, 0.0]; n_dofs];
    for (i, v) in mesh.vertices.iter().enumerate() {
        dof_coords[i] = *v;
    }
    let edge_dof = |a: usize, b: usize, edge_ids: &HashMap<(usize, usize), usize>| -> usize {
        nv + edge_ids[&(a.min(b), a.max(b))]
    };

    let mut elem_dofs = Vec::with_capacity(ne * dofs_per_elem);
    for el in &mesh.elements {
        elem_dofs.extend_from_slice(&el[..3]);
        if r == 2 {
            // Local order: midpoints of (0,1), (1,2), (2,0).
            for (a, b) in [(el[0], el[1]), (el[1], el[2]), (el[2], el[0])] {
                let d = edge_dof(a, b, &edge_ids);
                dof_coords[d] = [
                    0.5 * (mesh.vertices[a][0] + mesh.vertices[b][0]),
                    0.5 * (mesh.vertices[a][1] + mesh.vertices[b][1]),
                ];
                elem_dofs.push(d);
            }
        }
    }

    // Vertex -> one adjacent element (for facet_elem lookup).
    let mut edge_elem: HashMap<(usize, usize), usize> = HashMap::new();
    for (e, el) in mesh.elements.iter().enumerate() {
        for (a, b) in [(el[0], el[1]), (el[1], el[2]), (el[2], el[0])] {
            edge_elem.insert((a.min(b), a.max(b)), e);
        }
    }

    let mut dirichlet = vec![false; n_dofs];
    let mut facet_dofs = Vec::with_capacity(mesh.boundary.len());
    let mut facet_elem = Vec::with_capacity(mesh.boundary.len());
    for f in &mesh.boundary {
        let [a, b] = f.vertices;
        let mut dofs = vec![a, b];
        if r == 2 {
            dofs.push(edge_dof(a, b, &edge_ids));
        }
        if f.tag == BoundaryTag::Dirichlet {
            for &d in &dofs {
                dirichlet[d] = true;
            }
        }
        facet_dofs.push(dofs);
        let e = *edge_elem
            .get(&(a.min(b), a.max(b)))
            .ok_or_else(|| Error::invalid("boundary facet is not an element edge"))?;
        facet_elem.push(e);
    }

    Ok(FeSpace {
        mesh: mesh.clone(),
        order: r,
        n_dofs,
        dof_coords,
        dirichlet,
        dofs_per_elem,
        elem_dofs,
        facet_dofs,
        facet_elem,
    })
}
