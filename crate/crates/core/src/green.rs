//! Multi-frequency Green's-function sensing matrix.
//!
//! Column `(k, t)` holds the field at every imaging cell due to a unit line
//! source at transmitter `t` radiating at frequency `k`:
//! `G_k = Φ H_k⁻¹ Ψ`, with `Φ` sampling the imaging cells and `Ψ` the
//! transmitter sources. Columns are frequency-major: all transmitters of
//! frequency 0 come first.

use std::io::{Read, Write};

use faer::Mat;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use sha2::{Digest, Sha256};

use crate::fdfd::ForwardModel;
use crate::par;
use crate::scene::{DesignVector, Scene};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CAPMAXG\x01";

#[derive(Debug, Clone, PartialEq)]
pub struct GreensMatrix {
    data: DMatrix<C64>,
    /// `(frequency index, transmitter index)` per column.
    column_labels: Vec<(usize, usize)>,
    /// Imaging cell index per row.
    row_labels: Vec<usize>,
    fingerprint: String,
}

impl GreensMatrix {
    pub fn new(
        data: DMatrix<C64>,
        column_labels: Vec<(usize, usize)>,
        row_labels: Vec<usize>,
        fingerprint: String,
    ) -> Result<Self> {
        if data.ncols() != column_labels.len() || data.nrows() != row_labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix with {} row / {} column labels",
                data.nrows(),
                data.ncols(),
                row_labels.len(),
                column_labels.len()
            )));
        }
        Ok(Self {
            data,
            column_labels,
            row_labels,
            fingerprint,
        })
    }

    /// Unlabelled matrix, for analysis of arbitrary sensing matrices.
    pub fn from_matrix(data: DMatrix<C64>) -> Self {
        let column_labels = (0..data.ncols()).map(|c| (0, c)).collect();
        let row_labels = (0..data.nrows()).collect();
        Self {
            data,
            column_labels,
            row_labels,
            fingerprint: String::new(),
        }
    }

    pub fn data(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn column_labels(&self) -> &[(usize, usize)] {
        &self.column_labels
    }

    pub fn row_labels(&self) -> &[usize] {
        &self.row_labels
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Self-describing little-endian container:
    ///
    /// ```text
    /// magic "CAPMAXG\x01" | u64 rows | u64 cols | rows × u64 cell index
    /// | cols × (u32 k, u32 t) | u32 len + fingerprint bytes
    /// | rows·cols × (f64 re, f64 im), column-major
    /// ```
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.nrows() as u64).to_le_bytes())?;
        w.write_all(&(self.ncols() as u64).to_le_bytes())?;
        for &r in &self.row_labels {
            w.write_all(&(r as u64).to_le_bytes())?;
        }
        for &(k, t) in &self.column_labels {
            w.write_all(&(k as u32).to_le_bytes())?;
            w.write_all(&(t as u32).to_le_bytes())?;
        }
        w.write_all(&(self.fingerprint.len() as u32).to_le_bytes())?;
        w.write_all(self.fingerprint.as_bytes())?;
        for v in self.data.iter() {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b)?;
            Ok(b)
        }
        if &take::<8, _>(&mut r)? != MAGIC {
            return Err(Error::Format("not a Green's matrix container".into()));
        }
        let rows = u64::from_le_bytes(take(&mut r)?) as usize;
        let cols = u64::from_le_bytes(take(&mut r)?) as usize;
        let row_labels = (0..rows)
            .map(|_| Ok(u64::from_le_bytes(take(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let column_labels = (0..cols)
            .map(|_| {
                let k = u32::from_le_bytes(take(&mut r)?) as usize;
                let t = u32::from_le_bytes(take(&mut r)?) as usize;
                Ok((k, t))
            })
            .collect::<Result<Vec<_>>>()?;
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut fp = vec![0u8; len];
        r.read_exact(&mut fp)?;
        let fingerprint =
            String::from_utf8(fp).map_err(|_| Error::Format("fingerprint is not UTF-8".into()))?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let re = f64::from_le_bytes(take(&mut r)?);
            let im = f64::from_le_bytes(take(&mut r)?);
            values.push(C64::new(re, im));
        }
        Self::new(
            DMatrix::from_vec(rows, cols, values),
            column_labels,
            row_labels,
            fingerprint,
        )
    }

    /// Debug dump: `row,col,cell,k,t,re,im`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,col,cell,k,t,re,im")?;
        for (c, &(k, t)) in self.column_labels.iter().enumerate() {
            for (r, &cell) in self.row_labels.iter().enumerate() {
                let v = self.data[(r, c)];
                writeln!(w, "{r},{c},{cell},{k},{t},{:e},{:e}", v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// Hash of the scene and design that produced a matrix.
pub fn fingerprint(scene: &Scene, x: &DesignVector) -> String {
    let mut h = Sha256::new();
    h.update(scene.to_scene_string().as_bytes());
    for v in x.eps_r().iter().chain(x.mu_r()) {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Imaging-cell rows of a solved block, as an `M × cols` dense matrix.
pub(crate) fn sample_rows(
    model: &ForwardModel,
    solved: &Mat<C64>,
    cols: std::ops::Range<usize>,
) -> DMatrix<C64> {
    let scene = model.scene();
    let rows: Vec<usize> = scene
        .imaging()
        .iter()
        .map(|&c| {
            model
                .layout()
                .unknown(c)
                .expect("imaging cells are not PEC")
        })
        .collect();
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        solved[(rows[i], cols.start + j)]
    })
}

/// Right-hand-side block `Ψ` with one line source per transmitter.
pub(crate) fn transmitter_block(model: &ForwardModel) -> Result<Mat<C64>> {
    let scene = model.scene();
    let n = model.layout().num_unknowns();
    let mut rhs = Mat::<C64>::zeros(n, scene.transmitters().len());
    for (t, &cell) in scene.transmitters().iter().enumerate() {
        let b = model.point_source_rhs(cell)?;
        for (i, v) in b.into_iter().enumerate() {
            rhs[(i, t)] = v;
        }
    }
    Ok(rhs)
}

/// Stacks per-frequency `M × T` blocks into the frequency-major matrix.
pub(crate) fn concatenate(
    scene: &Scene,
    x: &DesignVector,
    blocks: &[DMatrix<C64>],
) -> Result<GreensMatrix> {
    let m = scene.imaging().len();
    let t = scene.transmitters().len();
    let mut data = DMatrix::<C64>::zeros(m, blocks.len() * t);
    for (k, b) in blocks.iter().enumerate() {
        data.columns_mut(k * t, t).copy_from(b);
    }
    let labels = (0..blocks.len())
        .flat_map(|k| (0..t).map(move |tt| (k, tt)))
        .collect();
    GreensMatrix::new(
        data,
        labels,
        scene.imaging().to_vec(),
        fingerprint(scene, x),
    )
}

impl ForwardModel {
    /// `G(x)` using `K·T` forward solves.
    pub fn green(&self, x: &DesignVector) -> Result<GreensMatrix> {
        let omegas = self.scene().frequencies().omegas();
        let psi = transmitter_block(self)?;
        let t = psi.ncols();
        let blocks = par::try_map(&omegas, |&omega| {
            let sys = self.assemble(x, omega)?;
            let solved = sys.solve_block(&psi)?;
            Ok::<_, Error>(sample_rows(self, &solved, 0..t))
        })?;
        concatenate(self.scene(), x, &blocks)
    }

    /// `G` when every frequency gets its own design (dispersive media).
    /// Used to check that the non-dispersive gradient sums per-frequency
    /// contributions correctly.
    pub fn green_per_frequency(&self, designs: &[DesignVector]) -> Result<GreensMatrix> {
        let omegas = self.scene().frequencies().omegas();
        if designs.len() != omegas.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} designs for {} frequencies",
                designs.len(),
                omegas.len()
            )));
        }
        let psi = transmitter_block(self)?;
        let t = psi.ncols();
        let jobs: Vec<(f64, &DesignVector)> = omegas.iter().copied().zip(designs).collect();
        let blocks = par::try_map(&jobs, |&(omega, x)| {
            let sys = self.assemble(x, omega)?;
            let solved = sys.solve_block(&psi)?;
            Ok::<_, Error>(sample_rows(self, &solved, 0..t))
        })?;
        concatenate(self.scene(), &designs[0], &blocks)
    }
}

/// Builds `G(x)` for a scene and design.
pub fn assemble_green(scene: &Scene, x: &DesignVector) -> Result<GreensMatrix> {
    ForwardModel::new(scene)?.green(x)
}

/// `GᴴG`, computed entrywise on the upper triangle and mirrored so the
/// result is exactly Hermitian.
pub fn gramian(g: &GreensMatrix) -> DMatrix<C64> {
    gramian_of(g.data())
}

pub(crate) fn gramian_of(g: &DMatrix<C64>) -> DMatrix<C64> {
    let n = g.ncols();
    let mut f = DMatrix::<C64>::zeros(n, n);
    for a in 0..n {
        let ca = g.column(a);
        for b in a..n {
            let v: C64 = ca
                .iter()
                .zip(g.column(b).iter())
                .map(|(x, y)| x.conj() * y)
                .sum();
            if a == b {
                f[(a, a)] = C64::new(v.re, 0.0);
            } else {
                f[(a, b)] = v;
                f[(b, a)] = v.conj();
            }
        }
    }
    f
}
