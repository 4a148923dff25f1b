//! Q1 finite element operators on a structured mesh.
//!
//! All operators act on interior DOFs (homogeneous Dirichlet conditions are
//! imposed by leaving boundary nodes out of the numbering). Element integrals
//! use 2x2 Gauss quadrature, which is exact here because the coefficient is
//! constant per element.

use thiserror::Error;

use crate::coeff::{CoeffError, CoefficientField, SymMat2};
use crate::grid::StructuredMesh;
use crate::linalg::{SparseMatrix, TripletBuilder};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("state resolution {state} is not divisible by control resolution {control}")]
    IncompatibleMeshes { state: usize, control: usize },
    #[error(transparent)]
    Coefficient(#[from] CoeffError),
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Affine function `c0 + c1 x1 + c2 x2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Affine {
    pub const fn new(c0: f64, c1: f64, c2: f64) -> Self {
        Self { c0, c1, c2 }
    }

    pub const fn constant(c: f64) -> Self {
        Self::new(c, 0.0, 0.0)
    }

    #[inline]
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        self.c0 + self.c1 * x1 + self.c2 * x2
    }
}

/// Piecewise-constant function on the control mesh, one value per cell
/// (row-major, row 0 at the bottom).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlFunction {
    pub values: Vec<f64>,
}

impl ControlFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(cells: usize, c: f64) -> Self {
        Self {
            values: vec![c; cells],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

const GAUSS: [f64; 2] = [
    0.5 - 0.288_675_134_594_812_9,
    0.5 + 0.288_675_134_594_812_9,
];

#[inline]
fn q1_grad(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta), -(1.0 - xi)],
        [1.0 - eta, -xi],
        [eta, xi],
        [-eta, 1.0 - xi],
    ]
}

/// Element stiffness `K_ab = int A grad(phi_b) . grad(phi_a)` on an `h x h`
/// square. In two dimensions the result does not depend on `h`.
pub fn element_stiffness(a: SymMat2, _h: f64) -> [[f64; 4]; 4] {
    let mut k = [[0.0; 4]; 4];
    for &xi in &GAUSS {
        for &eta in &GAUSS {
            let g = q1_grad(xi, eta);
            for i in 0..4 {
                let agx = a.a11 * g[i][0] + a.a12 * g[i][1];
                let agy = a.a12 * g[i][0] + a.a22 * g[i][1];
                for j in 0..4 {
                    k[i][j] += 0.25 * (agx * g[j][0] + agy * g[j][1]);
                }
            }
        }
    }
    k
}

/// Element mass matrix `(h^2/36) [[4,2,1,2],[2,4,2,1],[1,2,4,2],[2,1,2,4]]`.
pub fn element_mass(h: f64) -> [[f64; 4]; 4] {
    let s = h * h / 36.0;
    let pattern = [[4.0, 2.0, 1.0, 2.0], [2.0, 4.0, 2.0, 1.0], [1.0, 2.0, 4.0, 2.0], [2.0, 1.0, 2.0, 4.0]];
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = s * pattern[i][j];
        }
    }
    m
}

/// Global operators over the interior DOFs of one mesh.
#[derive(Debug, Clone)]
pub struct FemOperators {
    pub mesh: StructuredMesh,
    pub control_mesh: StructuredMesh,
    /// `a(phi_j, phi_i)`
    pub stiffness: SparseMatrix,
    /// `int phi_j phi_i`
    pub mass: SparseMatrix,
    /// `B[i][c] = int_{cell c} phi_i`
    pub control_coupling: SparseMatrix,
    pub cell_volumes: Vec<f64>,
}

pub fn assemble(mesh: &StructuredMesh, field: &CoefficientField, control_mesh: &StructuredMesh) -> Result<FemOperators, AssemblyError> {
    field.check_mesh(mesh)?;
    if mesh.n() % control_mesh.n() != 0 {
        return Err(AssemblyError::IncompatibleMeshes {
            state: mesh.n(),
            control: control_mesh.n(),
        });
    }
    let n = mesh.n();
    let ndof = mesh.interior_node_count();
    let ncell = control_mesh.element_count();
    let ratio = n / control_mesh.n();
    let h = mesh.h();
    let me = element_mass(h);
    let quarter = 0.25 * h * h;

    let mut kb = TripletBuilder::with_capacity(ndof, ndof, 16 * mesh.element_count());
    let mut mb = TripletBuilder::with_capacity(ndof, ndof, 16 * mesh.element_count());
    let mut bb = TripletBuilder::with_capacity(ndof, ncell, 4 * mesh.element_count());
    for e in 0..mesh.element_count() {
        let ke = element_stiffness(field.element(e), h);
        let dofs = mesh.element_nodes(e).map(|v| mesh.node_dof(v));
        let (ex, ey) = mesh.element_index(e);
        let cell = control_mesh.element_id(ex / ratio, ey / ratio);
        for a in 0..4 {
            let Some(i) = dofs[a] else { continue };
            bb.push(i, cell, quarter);
            for b in 0..4 {
                let Some(j) = dofs[b] else { continue };
                kb.push(i, j, ke[a][b]);
                mb.push(i, j, me[a][b]);
            }
        }
    }
    let cell_volumes = vec![control_mesh.h() * control_mesh.h(); ncell];
    Ok(FemOperators {
        mesh: *mesh,
        control_mesh: *control_mesh,
        stiffness: kb.build(),
        mass: mb.build(),
        control_coupling: bb.build(),
        cell_volumes,
    })
}

impl FemOperators {
    pub fn ndofs(&self) -> usize {
        self.stiffness.nrows()
    }

    pub fn ncells(&self) -> usize {
        self.cell_volumes.len()
    }

    /// `int c phi_i = c h^2` for every interior hat.
    pub fn load_constant(&self, c: f64) -> Vec<f64> {
        let h = self.mesh.h();
        vec![c * h * h; self.ndofs()]
    }

    /// `int f phi_i` for a Q1 function `f` given by values at all mesh nodes
    /// (boundary included).
    pub fn load_nodal(&self, node_values: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        let mesh = &self.mesh;
        if node_values.len() != mesh.node_count() {
            return Err(AssemblyError::DimensionMismatch {
                expected: mesh.node_count(),
                got: node_values.len(),
            });
        }
        let me = element_mass(mesh.h());
        let mut out = vec![0.0; self.ndofs()];
        for e in 0..mesh.element_count() {
            let nodes = mesh.element_nodes(e);
            for a in 0..4 {
                let Some(i) = mesh.node_dof(nodes[a]) else { continue };
                for b in 0..4 {
                    out[i] += me[a][b] * node_values[nodes[b]];
                }
            }
        }
        Ok(out)
    }

    /// `||f||^2_{L2}` for a Q1 function given at all nodes.
    pub fn l2_norm_sq_nodal(&self, node_values: &[f64]) -> Result<f64, AssemblyError> {
        let mesh = &self.mesh;
        if node_values.len() != mesh.node_count() {
            return Err(AssemblyError::DimensionMismatch {
                expected: mesh.node_count(),
                got: node_values.len(),
            });
        }
        let me = element_mass(mesh.h());
        let mut s = 0.0;
        for e in 0..mesh.element_count() {
            let nodes = mesh.element_nodes(e);
            for a in 0..4 {
                for b in 0..4 {
                    s += node_values[nodes[a]] * me[a][b] * node_values[nodes[b]];
                }
            }
        }
        Ok(s)
    }

    /// Cell averages of a fine DOF vector: `(B^T v)_c / |c|`.
    pub fn cell_average(&self, v: &[f64]) -> Result<ControlFunction, AssemblyError> {
        let integrals = self
            .control_coupling
            .spmv_transpose(v)
            .map_err(|_| AssemblyError::DimensionMismatch {
                expected: self.ndofs(),
                got: v.len(),
            })?;
        Ok(ControlFunction::new(
            integrals
                .iter()
                .zip(&self.cell_volumes)
                .map(|(s, vol)| s / vol)
                .collect(),
        ))
    }

    /// `(sqrt(v^T M v), sqrt(v^T K v))`.
    pub fn norms(&self, v: &[f64]) -> (f64, f64) {
        (
            self.mass.quadratic_form(v).max(0.0).sqrt(),
            self.stiffness.quadratic_form(v).max(0.0).sqrt(),
        )
    }
}

/// `Q_rho f` for an affine `f`: the cell average equals the centroid value.
pub fn q_rho_project(f: &Affine, control_mesh: &StructuredMesh) -> ControlFunction {
    ControlFunction::new(
        (0..control_mesh.element_count())
            .map(|c| {
                let (x1, x2) = control_mesh.element_centroid(c);
                f.eval(x1, x2)
            })
            .collect(),
    )
}

/// `Q_rho v` for a fine Q1 function vanishing on the boundary.
pub fn q_rho_project_fine(ops: &FemOperators, v: &[f64]) -> Result<ControlFunction, AssemblyError> {
    ops.cell_average(v)
}
