//! The estimation engine: one joint Gaussian over robot, sensor and
//! landmark states, stored in a fixed-capacity mean vector and covariance
//! matrix and addressed through block handles.
//!
//! Blocks are allocated first-fit from a free list and removed without
//! shuffling the survivors, so handles stay valid for the lifetime of a
//! landmark. Freed ranges are zeroed, which keeps whole-matrix operations
//! over the active extent correct without per-index masking. Prediction
//! touches one block plus its cross-covariance band; correction applies the
//! Kalman gain to the full active state, since every block correlates with
//! every other.

use std::fmt;
use std::io::{self, BufRead, Write};

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map full: requested {requested} states, largest free run is {largest_free}")]
    MapFull { requested: usize, largest_free: usize },
    #[error("stale or invalid block handle")]
    StaleHandle,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("innovation covariance is singular or not positive definite")]
    SingularInnovation,
    #[error("covariance asymmetric: max deviation {max_dev}")]
    Asymmetric { max_dev: f64 },
    #[error("covariance not positive semi-definite: min eigenvalue {min_eig}")]
    NotPositiveSemidefinite { min_eig: f64 },
    #[error("snapshot parse error at line {line}: {reason}")]
    SnapshotParse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockRole {
    Robot,
    Sensor,
    Landmark,
}

impl fmt::Display for BlockRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockRole::Robot => write!(f, "robot"),
            BlockRole::Sensor => write!(f, "sensor"),
            BlockRole::Landmark => write!(f, "landmark"),
        }
    }
}

/// Ticket for one allocated block. Copyable; goes stale once the block is
/// removed (generation counters catch reuse of the slot index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockHandle {
    index: usize,
    generation: u64,
}

#[derive(Debug, Clone, Copy)]
struct LiveBlock {
    role: BlockRole,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone)]
struct SlotRecord {
    generation: u64,
    live: Option<LiveBlock>,
}

/// Read-only view of one block's mean and self-covariance.
pub struct GaussianBlockView<'a> {
    pub role: BlockRole,
    pub offset: usize,
    pub mean: nalgebra::DVectorView<'a, f64>,
    pub cov: nalgebra::DMatrixView<'a, f64>,
}

#[derive(Clone)]
pub struct StochasticMap {
    x: DVector<f64>,
    p: DMatrix<f64>,
    slots: Vec<SlotRecord>,
    free_list: Vec<(usize, usize)>,
    capacity: usize,
}

impl StochasticMap {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            x: DVector::zeros(capacity),
            p: DMatrix::zeros(capacity, capacity),
            slots: Vec::new(),
            free_list: vec![(0, capacity)],
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn free_capacity(&self) -> usize {
        self.free_list.iter().map(|&(_, len)| len).sum()
    }

    pub fn largest_free_block(&self) -> usize {
        self.free_list.iter().map(|&(_, len)| len).max().unwrap_or(0)
    }

    /// One past the highest allocated index. Whole-state operations run on
    /// this extent only; everything beyond it is untouched zeros.
    pub fn active_extent(&self) -> usize {
        self.live_blocks()
            .map(|(_, b)| b.offset + b.len)
            .max()
            .unwrap_or(0)
    }

    fn live_blocks(&self) -> impl Iterator<Item = (usize, LiveBlock)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.live.map(|b| (i, b)))
    }

    pub fn handles(&self) -> impl Iterator<Item = (BlockHandle, BlockRole)> + '_ {
        self.live_blocks().map(|(i, b)| {
            (
                BlockHandle {
                    index: i,
                    generation: self.slots[i].generation,
                },
                b.role,
            )
        })
    }

    fn resolve(&self, handle: BlockHandle) -> Result<LiveBlock, MapError> {
        self.slots
            .get(handle.index)
            .filter(|s| s.generation == handle.generation)
            .and_then(|s| s.live)
            .ok_or(MapError::StaleHandle)
    }

    pub fn allocate(&mut self, role: BlockRole, len: usize) -> Result<BlockHandle, MapError> {
        let fit = self
            .free_list
            .iter()
            .position(|&(_, flen)| flen >= len)
            .ok_or(MapError::MapFull {
                requested: len,
                largest_free: self.largest_free_block(),
            })?;
        let (offset, flen) = self.free_list[fit];
        if flen == len {
            self.free_list.remove(fit);
        } else {
            self.free_list[fit] = (offset + len, flen - len);
        }

        let block = LiveBlock { role, offset, len };
        let index = match self.slots.iter().position(|s| s.live.is_none()) {
            Some(i) => {
                self.slots[i].generation += 1;
                self.slots[i].live = Some(block);
                i
            }
            None => {
                self.slots.push(SlotRecord {
                    generation: 0,
                    live: Some(block),
                });
                self.slots.len() - 1
            }
        };
        self.zero_range(offset, len);
        Ok(BlockHandle {
            index,
            generation: self.slots[index].generation,
        })
    }

    pub fn remove(&mut self, handle: BlockHandle) -> Result<(), MapError> {
        let block = self.resolve(handle)?;
        self.slots[handle.index].live = None;
        self.zero_range(block.offset, block.len);
        self.release_range(block.offset, block.len);
        Ok(())
    }

    fn zero_range(&mut self, offset: usize, len: usize) {
        self.x.rows_mut(offset, len).fill(0.0);
        self.p.rows_mut(offset, len).fill(0.0);
        self.p.columns_mut(offset, len).fill(0.0);
    }

    fn release_range(&mut self, offset: usize, len: usize) {
        let at = self
            .free_list
            .iter()
            .position(|&(o, _)| o > offset)
            .unwrap_or(self.free_list.len());
        self.free_list.insert(at, (offset, len));
        // merge neighbours that now touch
        let mut i = at.saturating_sub(1);
        while i + 1 < self.free_list.len() {
            let (o0, l0) = self.free_list[i];
            let (o1, l1) = self.free_list[i + 1];
            if o0 + l0 == o1 {
                self.free_list[i] = (o0, l0 + l1);
                self.free_list.remove(i + 1);
            } else {
                i += 1;
            }
        }
    }

    pub fn block(&self, handle: BlockHandle) -> Result<GaussianBlockView<'_>, MapError> {
        let b = self.resolve(handle)?;
        Ok(GaussianBlockView {
            role: b.role,
            offset: b.offset,
            mean: self.x.rows(b.offset, b.len),
            cov: self.p.view((b.offset, b.offset), (b.len, b.len)),
        })
    }

    pub fn block_mean(&self, handle: BlockHandle) -> Result<DVectorView<'_, f64>, MapError> {
        let b = self.resolve(handle)?;
        Ok(self.x.rows(b.offset, b.len))
    }

    /// Overwrites the block mean. Initialization only; filter updates go
    /// through predict and correct.
    pub fn set_block_mean(&mut self, handle: BlockHandle, mean: &DVector<f64>) -> Result<(), MapError> {
        let b = self.resolve(handle)?;
        if mean.len() != b.len {
            return Err(MapError::DimensionMismatch {
                expected: b.len,
                got: mean.len(),
            });
        }
        self.x.rows_mut(b.offset, b.len).copy_from(mean);
        Ok(())
    }

    /// Overwrites the block self-covariance (cross terms untouched).
    pub fn set_block_cov(&mut self, handle: BlockHandle, cov: &DMatrix<f64>) -> Result<(), MapError> {
        let b = self.resolve(handle)?;
        if cov.nrows() != b.len || cov.ncols() != b.len {
            return Err(MapError::DimensionMismatch {
                expected: b.len,
                got: cov.nrows(),
            });
        }
        self.p
            .view_mut((b.offset, b.offset), (b.len, b.len))
            .copy_from(cov);
        Ok(())
    }

    /// In-place mean edit hook for constraint enforcement (quaternion
    /// renormalization after corrections). Covariance is left untouched.
    pub fn edit_block_mean(
        &mut self,
        handle: BlockHandle,
        edit: impl FnOnce(nalgebra::DVectorViewMut<'_, f64>),
    ) -> Result<(), MapError> {
        let b = self.resolve(handle)?;
        edit(self.x.rows_mut(b.offset, b.len));
        Ok(())
    }

    /// Stacked mean and joint covariance (with cross terms) of the given
    /// blocks, in handle order.
    pub fn joint(&self, handles: &[BlockHandle]) -> Result<(DVector<f64>, DMatrix<f64>), MapError> {
        let blocks: Vec<LiveBlock> = handles
            .iter()
            .map(|&h| self.resolve(h))
            .collect::<Result<_, _>>()?;
        let total: usize = blocks.iter().map(|b| b.len).sum();
        let mut mean = DVector::zeros(total);
        let mut cov = DMatrix::zeros(total, total);
        let mut ri = 0;
        for bi in &blocks {
            mean.rows_mut(ri, bi.len).copy_from(&self.x.rows(bi.offset, bi.len));
            let mut ci = 0;
            for bj in &blocks {
                cov.view_mut((ri, ci), (bi.len, bj.len))
                    .copy_from(&self.p.view((bi.offset, bj.offset), (bi.len, bj.len)));
                ci += bj.len;
            }
            ri += bi.len;
        }
        Ok((mean, cov))
    }

    /// EKF prediction restricted to one block: the mean moves through `f`,
    /// the block covariance through F P Fᵀ + Q, and the cross band with
    /// every other live block through F P.
    pub fn predict_block(
        &mut self,
        handle: BlockHandle,
        f: impl FnOnce(DVectorView<'_, f64>) -> DVector<f64>,
        f_jac: &DMatrix<f64>,
        q: &DMatrix<f64>,
    ) -> Result<(), MapError> {
        let b = self.resolve(handle)?;
        if f_jac.nrows() != b.len || f_jac.ncols() != b.len || q.nrows() != b.len || q.ncols() != b.len {
            return Err(MapError::DimensionMismatch {
                expected: b.len,
                got: f_jac.nrows(),
            });
        }

        let new_mean = f(self.x.rows(b.offset, b.len));
        if new_mean.len() != b.len {
            return Err(MapError::DimensionMismatch {
                expected: b.len,
                got: new_mean.len(),
            });
        }
        self.x.rows_mut(b.offset, b.len).copy_from(&new_mean);

        let pbb = self.p.view((b.offset, b.offset), (b.len, b.len)).into_owned();
        let new_pbb = f_jac * &pbb * f_jac.transpose() + q;
        self.p
            .view_mut((b.offset, b.offset), (b.len, b.len))
            .copy_from(&new_pbb);

        let others: Vec<LiveBlock> = self
            .live_blocks()
            .map(|(_, o)| o)
            .filter(|o| o.offset != b.offset)
            .collect();
        for o in others {
            let cross = self.p.view((b.offset, o.offset), (b.len, o.len)).into_owned();
            let new_cross = f_jac * cross;
            self.p
                .view_mut((b.offset, o.offset), (b.len, o.len))
                .copy_from(&new_cross);
            self.p
                .view_mut((o.offset, b.offset), (o.len, b.len))
                .copy_from(&new_cross.transpose());
        }
        Ok(())
    }

    /// Innovation covariance S = H P Hᵀ + R, with H expressed on the
    /// stacked coordinates of `handles` (in order).
    pub fn innovation_covariance(
        &self,
        handles: &[BlockHandle],
        h: &DMatrix<f64>,
        r: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>, MapError> {
        let (_, pj) = self.joint(handles)?;
        if h.ncols() != pj.nrows() {
            return Err(MapError::DimensionMismatch {
                expected: pj.nrows(),
                got: h.ncols(),
            });
        }
        Ok(h * pj * h.transpose() + r)
    }

    /// Kalman correction. `h` maps the stacked coordinates of `handles` to
    /// the measurement; the gain K = P Hᵀ S⁻¹ is applied to the whole
    /// active state. Fails (leaving the map untouched) when S is not
    /// positive definite, so the caller can flag the observation instead.
    pub fn correct(
        &mut self,
        handles: &[BlockHandle],
        h: &DMatrix<f64>,
        y: &DVector<f64>,
        s: &DMatrix<f64>,
    ) -> Result<(), MapError> {
        let blocks: Vec<LiveBlock> = handles
            .iter()
            .map(|&hd| self.resolve(hd))
            .collect::<Result<_, _>>()?;
        let stacked: usize = blocks.iter().map(|b| b.len).sum();
        let m = y.len();
        if h.nrows() != m || h.ncols() != stacked {
            return Err(MapError::DimensionMismatch {
                expected: stacked,
                got: h.ncols(),
            });
        }
        if s.nrows() != m || s.ncols() != m {
            return Err(MapError::DimensionMismatch { expected: m, got: s.nrows() });
        }
        let chol = Cholesky::new(s.clone()).ok_or(MapError::SingularInnovation)?;

        let n = self.active_extent();
        // P Hᵀ over the active extent; freed ranges are zero and stay zero.
        let mut pht = DMatrix::zeros(n, m);
        let mut col = 0;
        for b in &blocks {
            let hb = h.columns(col, b.len);
            pht += self.p.view((0, b.offset), (n, b.len)) * hb.transpose();
            col += b.len;
        }
        let k = &pht * chol.inverse();

        let dx = &k * y;
        {
            let mut xa = self.x.rows_mut(0, n);
            xa += dx;
        }
        // K S Kᵀ = K (P Hᵀ)ᵀ, then symmetrize to kill rounding skew.
        let update = &k * pht.transpose();
        {
            let mut pa = self.p.view_mut((0, 0), (n, n));
            pa -= 0.5 * (&update + update.transpose());
        }
        self.symmetrize(n);
        Ok(())
    }

    fn symmetrize(&mut self, n: usize) {
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.p[(i, j)] + self.p[(j, i)]);
                self.p[(i, j)] = v;
                self.p[(j, i)] = v;
            }
        }
    }

    /// Adds a block derived from a parent block: mean `mean`, covariance
    /// J Ppp Jᵀ + extra, cross terms J Pp∗. `extra_cov` carries the
    /// measurement-noise contribution of the initialization.
    pub fn augment(
        &mut self,
        parent: BlockHandle,
        role: BlockRole,
        mean: &DVector<f64>,
        j_parent: &DMatrix<f64>,
        extra_cov: &DMatrix<f64>,
    ) -> Result<BlockHandle, MapError> {
        let pb = self.resolve(parent)?;
        let len = mean.len();
        if j_parent.nrows() != len || j_parent.ncols() != pb.len {
            return Err(MapError::DimensionMismatch {
                expected: pb.len,
                got: j_parent.ncols(),
            });
        }
        if extra_cov.nrows() != len || extra_cov.ncols() != len {
            return Err(MapError::DimensionMismatch {
                expected: len,
                got: extra_cov.nrows(),
            });
        }

        let child = self.allocate(role, len)?;
        let cb = self.resolve(child).expect("fresh handle");

        self.x.rows_mut(cb.offset, cb.len).copy_from(mean);

        let ppp = self.p.view((pb.offset, pb.offset), (pb.len, pb.len)).into_owned();
        let pcc = j_parent * &ppp * j_parent.transpose() + extra_cov;
        self.p
            .view_mut((cb.offset, cb.offset), (cb.len, cb.len))
            .copy_from(&pcc);

        let others: Vec<LiveBlock> = self
            .live_blocks()
            .map(|(_, o)| o)
            .filter(|o| o.offset != cb.offset)
            .collect();
        for o in others {
            let cross = j_parent * self.p.view((pb.offset, o.offset), (pb.len, o.len));
            self.p
                .view_mut((cb.offset, o.offset), (cb.len, o.len))
                .copy_from(&cross);
            self.p
                .view_mut((o.offset, cb.offset), (o.len, cb.len))
                .copy_from(&cross.transpose());
        }
        Ok(child)
    }

    /// Swaps a block for a lower-dimensional reparametrization g(old) with
    /// Jacobian `j_old`, propagating self- and cross-covariance. Returns
    /// the handle of the replacement block (same role).
    pub fn replace_block(
        &mut self,
        handle: BlockHandle,
        new_mean: &DVector<f64>,
        j_old: &DMatrix<f64>,
    ) -> Result<BlockHandle, MapError> {
        let b = self.resolve(handle)?;
        let new_len = new_mean.len();
        if j_old.nrows() != new_len || j_old.ncols() != b.len {
            return Err(MapError::DimensionMismatch {
                expected: b.len,
                got: j_old.ncols(),
            });
        }

        let pbb = self.p.view((b.offset, b.offset), (b.len, b.len)).into_owned();
        let new_self = j_old * &pbb * j_old.transpose();
        let crosses: Vec<(LiveBlock, DMatrix<f64>)> = self
            .live_blocks()
            .map(|(_, o)| o)
            .filter(|o| o.offset != b.offset)
            .map(|o| {
                let c = j_old * self.p.view((b.offset, o.offset), (b.len, o.len));
                (o, c)
            })
            .collect();
        let role = b.role;

        self.remove(handle)?;
        let new_handle = self.allocate(role, new_len)?;
        let nb = self.resolve(new_handle).expect("fresh handle");

        self.x.rows_mut(nb.offset, nb.len).copy_from(new_mean);
        self.p
            .view_mut((nb.offset, nb.offset), (nb.len, nb.len))
            .copy_from(&new_self);
        for (o, c) in crosses {
            self.p
                .view_mut((nb.offset, o.offset), (nb.len, o.len))
                .copy_from(&c);
            self.p
                .view_mut((o.offset, nb.offset), (o.len, nb.len))
                .copy_from(&c.transpose());
        }
        Ok(new_handle)
    }

    /// Health check: covariance symmetric within 1e-9 and positive
    /// semi-definite within numerical slack over the active extent.
    pub fn audit(&self) -> Result<(), MapError> {
        let n = self.active_extent();
        let pa = self.p.view((0, 0), (n, n));
        let mut max_dev: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                max_dev = max_dev.max((pa[(i, j)] - pa[(j, i)]).abs());
            }
        }
        if max_dev > 1e-9 {
            return Err(MapError::Asymmetric { max_dev });
        }
        let sym = 0.5 * (pa.into_owned() + pa.transpose());
        let min_eig = sym
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if n > 0 && min_eig < -1e-8 {
            return Err(MapError::NotPositiveSemidefinite { min_eig });
        }
        Ok(())
    }

    /// Text snapshot: one tagged CSV record per line. Floats print in
    /// shortest round-trip form, so load(save(m)) is bit-identical.
    ///
    /// ```text
    /// capacity,<n>
    /// slot,<id>,<generation>,<role|->,<offset|->,<len|->
    /// mean,<index>,<value>          (active indices only)
    /// cov,<row>,<col>,<value>       (upper triangle of the active extent)
    /// ```
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# stochastic map snapshot v1")?;
        writeln!(w, "capacity,{}", self.capacity)?;
        for (i, s) in self.slots.iter().enumerate() {
            match s.live {
                Some(b) => writeln!(w, "slot,{},{},{},{},{}", i, s.generation, b.role, b.offset, b.len)?,
                None => writeln!(w, "slot,{},{},-,-,-", i, s.generation)?,
            }
        }
        let n = self.active_extent();
        for i in 0..n {
            writeln!(w, "mean,{},{}", i, self.x[i])?;
        }
        for i in 0..n {
            for j in i..n {
                writeln!(w, "cov,{},{},{}", i, j, self.p[(i, j)])?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(r: R) -> Result<Self, MapError> {
        let parse_err = |line: usize, reason: &str| MapError::SnapshotParse {
            line,
            reason: reason.to_string(),
        };
        let mut map: Option<StochasticMap> = None;
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            match fields[0] {
                "capacity" => {
                    let cap: usize = fields
                        .get(1)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln, "bad capacity"))?;
                    map = Some(StochasticMap::with_capacity(cap));
                }
                "slot" => {
                    let m = map.as_mut().ok_or_else(|| parse_err(ln, "slot before capacity"))?;
                    if fields.len() != 6 {
                        return Err(parse_err(ln, "slot needs 6 fields"));
                    }
                    let generation: u64 =
                        fields[2].parse().map_err(|_| parse_err(ln, "bad generation"))?;
                    let live = if fields[3] == "-" {
                        None
                    } else {
                        let role = match fields[3] {
                            "robot" => BlockRole::Robot,
                            "sensor" => BlockRole::Sensor,
                            "landmark" => BlockRole::Landmark,
                            _ => return Err(parse_err(ln, "unknown role")),
                        };
                        let offset: usize =
                            fields[4].parse().map_err(|_| parse_err(ln, "bad offset"))?;
                        let len: usize = fields[5].parse().map_err(|_| parse_err(ln, "bad len"))?;
                        if offset + len > m.capacity {
                            return Err(parse_err(ln, "block outside capacity"));
                        }
                        Some(LiveBlock { role, offset, len })
                    };
                    m.slots.push(SlotRecord { generation, live });
                }
                "mean" => {
                    let m = map.as_mut().ok_or_else(|| parse_err(ln, "mean before capacity"))?;
                    let i: usize = fields[1].parse().map_err(|_| parse_err(ln, "bad index"))?;
                    let v: f64 = fields[2].parse().map_err(|_| parse_err(ln, "bad value"))?;
                    m.x[i] = v;
                }
                "cov" => {
                    let m = map.as_mut().ok_or_else(|| parse_err(ln, "cov before capacity"))?;
                    let i: usize = fields[1].parse().map_err(|_| parse_err(ln, "bad row"))?;
                    let j: usize = fields[2].parse().map_err(|_| parse_err(ln, "bad col"))?;
                    let v: f64 = fields[3].parse().map_err(|_| parse_err(ln, "bad value"))?;
                    m.p[(i, j)] = v;
                    m.p[(j, i)] = v;
                }
                other => return Err(parse_err(ln, &format!("unknown record {other}"))),
            }
        }
        let mut m = map.ok_or_else(|| parse_err(0, "empty snapshot"))?;
        m.rebuild_free_list();
        Ok(m)
    }

    fn rebuild_free_list(&mut self) {
        let mut used: Vec<(usize, usize)> = self.live_blocks().map(|(_, b)| (b.offset, b.len)).collect();
        used.sort_unstable();
        self.free_list.clear();
        let mut cursor = 0;
        for (off, len) in used {
            if off > cursor {
                self.free_list.push((cursor, off - cursor));
            }
            cursor = off + len;
        }
        if cursor < self.capacity {
            self.free_list.push((cursor, self.capacity - cursor));
        }
    }
}

/// Squared Mahalanobis distance yᵀ S⁻¹ y. Fails when S is not positive
/// definite so the caller can mark the observation inconsistent.
pub fn mahalanobis(y: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64, MapError> {
    let chol = Cholesky::new(s.clone()).ok_or(MapError::SingularInnovation)?;
    let sol = chol.solve(y);
    Ok(y.dot(&sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 1e-3
    }

    /// Map with one 3-dim robot block and two 2-dim landmarks, randomized
    /// mean and joint SPD covariance. Returns the dense 7x7 mirror.
    fn seeded_three_block_map(
        rng: &mut ChaCha8Rng,
    ) -> (StochasticMap, Vec<BlockHandle>, DVector<f64>, DMatrix<f64>) {
        let mut m = StochasticMap::with_capacity(12);
        let r = m.allocate(BlockRole::Robot, 3).unwrap();
        let l1 = m.allocate(BlockRole::Landmark, 2).unwrap();
        let l2 = m.allocate(BlockRole::Landmark, 2).unwrap();
        let x = DVector::from_fn(7, |_, _| rng.random_range(-2.0..2.0));
        let p = random_spd(rng, 7);
        for i in 0..7 {
            m.x[i] = x[i];
            for j in 0..7 {
                m.p[(i, j)] = p[(i, j)];
            }
        }
        (m, vec![r, l1, l2], x, p)
    }

    #[test]
    fn first_allocation_starts_at_zero() {
        let mut m = StochasticMap::with_capacity(100);
        let h = m.allocate(BlockRole::Robot, 7).unwrap();
        assert_eq!(m.block(h).unwrap().offset, 0);
        assert_eq!(m.free_capacity(), 93);
    }

    #[test]
    fn over_capacity_is_rejected() {
        let mut m = StochasticMap::with_capacity(10);
        m.allocate(BlockRole::Robot, 7).unwrap();
        let err = m.allocate(BlockRole::Landmark, 7).unwrap_err();
        assert!(matches!(err, MapError::MapFull { requested: 7, largest_free: 3 }));
    }

    #[test]
    fn freed_slot_is_reused() {
        let mut m = StochasticMap::with_capacity(20);
        let _r = m.allocate(BlockRole::Robot, 7).unwrap();
        let l = m.allocate(BlockRole::Landmark, 7).unwrap();
        let off = m.block(l).unwrap().offset;
        m.remove(l).unwrap();
        assert_eq!(m.free_capacity(), 13);
        let l2 = m.allocate(BlockRole::Landmark, 7).unwrap();
        assert_eq!(m.block(l2).unwrap().offset, off);
    }

    #[test]
    fn double_free_is_rejected() {
        let mut m = StochasticMap::with_capacity(10);
        let h = m.allocate(BlockRole::Landmark, 3).unwrap();
        m.remove(h).unwrap();
        assert!(matches!(m.remove(h), Err(MapError::StaleHandle)));
        // slot index reuse must not resurrect the stale handle
        let _h2 = m.allocate(BlockRole::Landmark, 3).unwrap();
        assert!(matches!(m.block(h), Err(MapError::StaleHandle)));
    }

    #[test]
    fn adjacent_free_ranges_merge() {
        let mut m = StochasticMap::with_capacity(12);
        let a = m.allocate(BlockRole::Landmark, 4).unwrap();
        let b = m.allocate(BlockRole::Landmark, 4).unwrap();
        let c = m.allocate(BlockRole::Landmark, 4).unwrap();
        m.remove(a).unwrap();
        m.remove(c).unwrap();
        m.remove(b).unwrap();
        assert_eq!(m.free_list, vec![(0, 12)]);
    }

    #[test]
    fn remove_leaves_other_blocks_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let (mut m, hs, x, p) = seeded_three_block_map(&mut rng);
        m.remove(hs[1]).unwrap();
        // dense oracle: delete the landmark's rows and columns (indices 3,4)
        let keep = [0usize, 1, 2, 5, 6];
        let (mean, cov) = m.joint(&[hs[0], hs[2]]).unwrap();
        for (a, &i) in keep.iter().enumerate() {
            assert_eq!(mean[a], x[i]);
            for (b, &j) in keep.iter().enumerate() {
                assert_eq!(cov[(a, b)], p[(i, j)]);
            }
        }
    }

    #[test]
    fn identity_predict_without_noise_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mut m, hs, x, p) = seeded_three_block_map(&mut rng);
        m.predict_block(
            hs[0],
            |xb| xb.into_owned(),
            &DMatrix::identity(3, 3),
            &DMatrix::zeros(3, 3),
        )
        .unwrap();
        let (mean, cov) = m.joint(&hs).unwrap();
        assert_eq!(mean, x);
        assert_eq!(cov, p);
    }

    #[test]
    fn identity_predict_with_noise_inflates_own_block_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (mut m, hs, x, p) = seeded_three_block_map(&mut rng);
        let q = DMatrix::identity(3, 3) * 0.3;
        m.predict_block(hs[0], |xb| xb.into_owned(), &DMatrix::identity(3, 3), &q)
            .unwrap();
        let (mean, cov) = m.joint(&hs).unwrap();
        assert_eq!(mean, x);
        for i in 0..7 {
            for j in 0..7 {
                let expect = p[(i, j)] + if i == j && i < 3 { 0.3 } else { 0.0 };
                assert_relative_eq!(cov[(i, j)], expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn predict_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let (mut m, hs, x, p) = seeded_three_block_map(&mut rng);
            let f = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let q = random_spd(&mut rng, 3);
            let shift = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            {
                let fc = f.clone();
                let shift = shift.clone();
                m.predict_block(hs[0], move |xb| &fc * xb + shift, &f, &q).unwrap();
            }

            // dense: F embedded in identity over the full 7-dim state
            let mut f_full = DMatrix::identity(7, 7);
            f_full.view_mut((0, 0), (3, 3)).copy_from(&f);
            let mut q_full = DMatrix::zeros(7, 7);
            q_full.view_mut((0, 0), (3, 3)).copy_from(&q);
            let mut x_full = x.clone();
            let moved = &f * x.rows(0, 3) + &shift;
            x_full.rows_mut(0, 3).copy_from(&moved);
            let p_full = &f_full * &p * f_full.transpose() + q_full;

            let (mean, cov) = m.joint(&hs).unwrap();
            assert_relative_eq!(mean, x_full, epsilon = 1e-10);
            assert_relative_eq!(cov, p_full, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_innovation_keeps_mean_and_contracts_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let (mut m, hs, x, p) = seeded_three_block_map(&mut rng);
        let h = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let r = random_spd(&mut rng, 2);
        let s = m.innovation_covariance(&[hs[1]], &h, &r).unwrap();
        m.correct(&[hs[1]], &h, &DVector::zeros(2), &s).unwrap();
        let (mean, cov) = m.joint(&hs).unwrap();
        assert_relative_eq!(mean, x, epsilon = 1e-12);
        assert!(cov.trace() < p.trace());
    }

    #[test]
    fn scalar_kalman_update() {
        let mut m = StochasticMap::with_capacity(4);
        let h = m.allocate(BlockRole::Robot, 1).unwrap();
        m.set_block_cov(h, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        let hm = DMatrix::from_element(1, 1, 1.0);
        let r = DMatrix::from_element(1, 1, 1.0);
        let s = m.innovation_covariance(&[h], &hm, &r).unwrap();
        assert_eq!(s[(0, 0)], 2.0);
        m.correct(&[h], &hm, &DVector::from_element(1, 1.0), &s).unwrap();
        let view = m.block(h).unwrap();
        assert_relative_eq!(view.mean[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(view.cov[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn correct_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..50 {
            let (mut m, hs, x, p) = seeded_three_block_map(&mut rng);
            // 2D measurement of robot block and landmark 2 jointly
            let h = DMatrix::from_fn(2, 5, |_, _| rng.random_range(-1.0..1.0));
            let r = random_spd(&mut rng, 2);
            let y = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
            let s = m.innovation_covariance(&[hs[0], hs[2]], &h, &r).unwrap();
            m.correct(&[hs[0], hs[2]], &h, &y, &s).unwrap();

            // dense oracle over the full state: H columns land on the
            // robot (0..3) and second landmark (5..7) ranges
            let mut h_full = DMatrix::zeros(2, 7);
            h_full.view_mut((0, 0), (2, 3)).copy_from(&h.columns(0, 3));
            h_full.view_mut((0, 5), (2, 2)).copy_from(&h.columns(3, 2));
            let s_dense = &h_full * &p * h_full.transpose() + &r;
            let k = &p * h_full.transpose() * s_dense.clone().try_inverse().unwrap();
            let x_dense = &x + &k * &y;
            let p_dense = &p - &k * &s_dense * k.transpose();

            let (mean, cov) = m.joint(&hs).unwrap();
            assert_relative_eq!(mean, x_dense, epsilon = 1e-10);
            assert_relative_eq!(cov, p_dense, epsilon = 1e-9);
        }
    }

    #[test]
    fn exact_measurement_with_zero_noise_collapses_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let (mut m, hs, _, _) = seeded_three_block_map(&mut rng);
        let h = DMatrix::identity(2, 2);
        let r = DMatrix::zeros(2, 2);
        let s = m.innovation_covariance(&[hs[1]], &h, &r).unwrap();
        let y = DVector::from_vec(vec![0.7, -0.2]);
        m.correct(&[hs[1]], &h, &y, &s).unwrap();
        let view = m.block(hs[1]).unwrap();
        assert!(view.cov[(0, 0)].abs() < 1e-9);
        assert!(view.cov[(1, 1)].abs() < 1e-9);
        m.audit().unwrap();
    }

    #[test]
    fn singular_innovation_is_flagged_and_map_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let (mut m, hs, x, p) = seeded_three_block_map(&mut rng);
        let s = DMatrix::zeros(2, 2);
        let err = m
            .correct(&[hs[1]], &DMatrix::identity(2, 2), &DVector::zeros(2), &s)
            .unwrap_err();
        assert!(matches!(err, MapError::SingularInnovation));
        let (mean, cov) = m.joint(&hs).unwrap();
        assert_eq!(mean, x);
        assert_eq!(cov, p);
    }

    #[test]
    fn mahalanobis_examples() {
        assert_eq!(
            mahalanobis(&DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap(),
            0.0
        );
        let d9 = mahalanobis(&DVector::from_vec(vec![3.0, 0.0]), &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(d9, 9.0, epsilon = 1e-12);
        assert!(d9 < 9.210340371976182); // inside the 99% gate for 2 dof
        let d16 = mahalanobis(&DVector::from_vec(vec![4.0, 0.0]), &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(d16, 16.0, epsilon = 1e-12);
        assert!(d16 > 9.210340371976182);
        assert!(mahalanobis(&DVector::zeros(2), &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn augment_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        for _ in 0..20 {
            let (mut m, hs, _, p) = seeded_three_block_map(&mut rng);
            let j = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
            let extra = random_spd(&mut rng, 2);
            let mean = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let child = m.augment(hs[0], BlockRole::Landmark, &mean, &j, &extra).unwrap();

            let (_, cov) = m.joint(&[hs[0], hs[1], hs[2], child]).unwrap();
            let ppp = p.view((0, 0), (3, 3));
            let expect_cc = &j * ppp * j.transpose() + &extra;
            assert_relative_eq!(cov.view((7, 7), (2, 2)).into_owned(), expect_cc, epsilon = 1e-12);
            let expect_cr = &j * p.view((0, 0), (3, 7)).into_owned();
            assert_relative_eq!(cov.view((7, 0), (2, 7)).into_owned(), expect_cr, epsilon = 1e-12);
            assert_eq!(m.block_mean(child).unwrap().into_owned(), mean);
            m.audit().unwrap();
        }
    }

    #[test]
    fn replace_block_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let (mut m, hs, x, p) = seeded_three_block_map(&mut rng);
            // swap the first 2-dim landmark for a 1-dim reparametrization
            let j = DMatrix::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0));
            let new_mean = DVector::from_element(1, rng.random_range(-1.0..1.0));
            let nh = m.replace_block(hs[1], &new_mean, &j).unwrap();

            // dense oracle: G maps (robot, l1, l2) -> (robot, g(l1), l2)
            let mut g = DMatrix::zeros(6, 7);
            g.view_mut((0, 0), (3, 3)).copy_from(&DMatrix::identity(3, 3));
            g.view_mut((3, 3), (1, 2)).copy_from(&j);
            g.view_mut((4, 5), (2, 2)).copy_from(&DMatrix::identity(2, 2));
            let p_dense = &g * &p * g.transpose();
            let mut x_dense = &g * &x;
            x_dense[3] = new_mean[0];

            let (mean, cov) = m.joint(&[hs[0], nh, hs[2]]).unwrap();
            assert_relative_eq!(cov, p_dense, epsilon = 1e-12);
            assert_relative_eq!(mean.rows(0, 3).into_owned(), x_dense.rows(0, 3).into_owned());
            assert_eq!(mean[3], new_mean[0]);
            assert!(matches!(m.block(hs[1]), Err(MapError::StaleHandle)));
        }
    }

    #[test]
    fn snapshot_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let (mut m, hs, _, _) = seeded_three_block_map(&mut rng);
        m.remove(hs[1]).unwrap(); // leave a hole so slots and free list are exercised
        let mut buf = Vec::new();
        m.write_snapshot(&mut buf).unwrap();
        let loaded = StochasticMap::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(loaded.capacity, m.capacity);
        assert_eq!(loaded.x, m.x);
        assert_eq!(loaded.p, m.p);
        assert_eq!(loaded.free_list, m.free_list);
        let a: Vec<_> = m.handles().collect();
        let b: Vec<_> = loaded.handles().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn fuzzed_operation_sequences_stay_healthy() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut m = StochasticMap::with_capacity(30);
        let mut live: Vec<BlockHandle> = Vec::new();
        let robot = m.allocate(BlockRole::Robot, 3).unwrap();
        m.set_block_cov(robot, &random_spd(&mut rng, 3)).unwrap();
        for _ in 0..2000 {
            match rng.random_range(0..4) {
                0 => {
                    if let Ok(h) = m.allocate(BlockRole::Landmark, rng.random_range(1..4)) {
                        let n = m.block(h).unwrap().mean.len();
                        let j = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-0.5..0.5));
                        m.remove(h).unwrap();
                        let mean = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                        if let Ok(h2) = m.augment(robot, BlockRole::Landmark, &mean, &j, &random_spd(&mut rng, n)) {
                            live.push(h2);
                        }
                    }
                }
                1 => {
                    if !live.is_empty() {
                        let h = live.swap_remove(rng.random_range(0..live.len()));
                        m.remove(h).unwrap();
                    }
                }
                2 => {
                    let f = DMatrix::from_fn(3, 3, |r, c| {
                        if r == c { 1.0 } else { rng.random_range(-0.1..0.1) }
                    });
                    let q = DMatrix::identity(3, 3) * 0.01;
                    let fc = f.clone();
                    m.predict_block(robot, move |x| &fc * x, &f, &q).unwrap();
                }
                _ => {
                    let h = DMatrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0));
                    let r = DMatrix::from_element(1, 1, 0.1);
                    let s = m.innovation_covariance(&[robot], &h, &r).unwrap();
                    let y = DVector::from_element(1, rng.random_range(-0.3..0.3));
                    m.correct(&[robot], &h, &y, &s).unwrap();
                }
            }
        }
        m.audit().unwrap();
    }
}
