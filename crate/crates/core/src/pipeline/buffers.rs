//! Three host slabs and the per-device slot pair, with role rotation.
//!
//! Host roles: `read` receives the next disk read, `upload` holds the block
//! being copied to the devices, `sloop` receives solved columns back and
//! feeds the host S-loop. Device roles: `alpha` computes, `beta` transfers.
//! Rotation only reassigns indices.

use std::sync::Arc;

use super::PipelineError;

#[derive(Debug)]
pub enum HostSlab {
    Resident(Vec<f64>),
    /// Lent to an in-flight disk read.
    Reading,
    /// Shared with in-flight device uploads.
    Uploading(Arc<Vec<f64>>),
}

impl HostSlab {
    pub fn is_resident(&self) -> bool {
        matches!(self, HostSlab::Resident(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostRole {
    Read,
    SLoop,
    Upload,
}

#[derive(Debug)]
pub struct BufferSet {
    slabs: [HostSlab; 3],
    read: usize,
    sloop: usize,
    upload: usize,
    alpha: usize,
}

impl BufferSet {
    /// Initial roles are chosen so that block `j` is read into slab
    /// `j mod 3` and solved in device slot `j mod 2`.
    pub fn new(values_per_slab: usize) -> Self {
        let slab = || HostSlab::Resident(Vec::with_capacity(values_per_slab));
        Self {
            slabs: [slab(), slab(), slab()],
            read: 1,
            sloop: 2,
            upload: 0,
            alpha: 1,
        }
    }

    pub fn index(&self, role: HostRole) -> usize {
        match role {
            HostRole::Read => self.read,
            HostRole::SLoop => self.sloop,
            HostRole::Upload => self.upload,
        }
    }

    pub fn role_of(&self, slab: usize) -> HostRole {
        if slab == self.read {
            HostRole::Read
        } else if slab == self.sloop {
            HostRole::SLoop
        } else {
            HostRole::Upload
        }
    }

    pub fn slab(&self, i: usize) -> &HostSlab {
        &self.slabs[i]
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn beta(&self) -> usize {
        1 - self.alpha
    }

    fn illegal(&self, role: HostRole, op: &'static str) -> PipelineError {
        let i = self.index(role);
        PipelineError::IllegalBufferState(format!(
            "host slab {i} ({role:?} role): cannot {op} while {}",
            match &self.slabs[i] {
                HostSlab::Resident(_) => "resident",
                HostSlab::Reading => "reading",
                HostSlab::Uploading(_) => "uploading",
            }
        ))
    }

    /// Hands the read-role slab to a disk read.
    pub fn lend_for_read(&mut self) -> Result<Vec<f64>, PipelineError> {
        let i = self.read;
        match std::mem::replace(&mut self.slabs[i], HostSlab::Reading) {
            HostSlab::Resident(v) => Ok(v),
            other => {
                self.slabs[i] = other;
                Err(self.illegal(HostRole::Read, "start a read"))
            }
        }
    }

    /// Returns a completed read; by then the slab holds the upload role.
    pub fn land_read(&mut self, data: Vec<f64>) -> Result<(), PipelineError> {
        let i = self.upload;
        if !matches!(self.slabs[i], HostSlab::Reading) {
            return Err(self.illegal(HostRole::Upload, "land a read"));
        }
        self.slabs[i] = HostSlab::Resident(data);
        Ok(())
    }

    /// Shares the upload-role slab with the devices.
    pub fn share_for_upload(&mut self) -> Result<Arc<Vec<f64>>, PipelineError> {
        let i = self.upload;
        match std::mem::replace(&mut self.slabs[i], HostSlab::Reading) {
            HostSlab::Resident(v) => {
                let a = Arc::new(v);
                self.slabs[i] = HostSlab::Uploading(a.clone());
                Ok(a)
            }
            other => {
                self.slabs[i] = other;
                Err(self.illegal(HostRole::Upload, "start an upload"))
            }
        }
    }

    /// Takes back the uploaded slab once every send was waited; by then it
    /// holds the S-loop role and is about to receive solved columns.
    pub fn reclaim_upload(&mut self) -> Result<(), PipelineError> {
        let i = self.sloop;
        match std::mem::replace(&mut self.slabs[i], HostSlab::Reading) {
            HostSlab::Uploading(a) => match Arc::try_unwrap(a) {
                Ok(v) => {
                    self.slabs[i] = HostSlab::Resident(v);
                    Ok(())
                }
                Err(a) => {
                    self.slabs[i] = HostSlab::Uploading(a);
                    Err(self.illegal(HostRole::SLoop, "reclaim a slab still referenced by a device"))
                }
            },
            other => {
                self.slabs[i] = other;
                Err(self.illegal(HostRole::SLoop, "reclaim"))
            }
        }
    }

    pub fn sloop_slab(&mut self) -> Result<&mut Vec<f64>, PipelineError> {
        let i = self.sloop;
        if !self.slabs[i].is_resident() {
            return Err(self.illegal(HostRole::SLoop, "access"));
        }
        match &mut self.slabs[i] {
            HostSlab::Resident(v) => Ok(v),
            _ => unreachable!(),
        }
    }
}

/// End-of-iteration role switch: read becomes upload, upload becomes
/// S-loop, S-loop becomes read; alpha and beta swap. The slab entering the
/// read role must not be in use.
pub fn rotate_buffers(mut b: BufferSet) -> Result<BufferSet, PipelineError> {
    if !b.slabs[b.sloop].is_resident() {
        return Err(b.illegal(HostRole::SLoop, "rotate into the read role"));
    }
    let (read, sloop, upload) = (b.read, b.sloop, b.upload);
    b.upload = read;
    b.sloop = upload;
    b.read = sloop;
    b.alpha = 1 - b.alpha;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(b: &BufferSet) -> (usize, usize, usize, usize) {
        (
            b.index(HostRole::Read),
            b.index(HostRole::SLoop),
            b.index(HostRole::Upload),
            b.alpha(),
        )
    }

    #[test]
    fn rotation_cycles() {
        let b = BufferSet::new(4);
        let r0 = roles(&b);
        let b = rotate_buffers(b).unwrap();
        let r1 = roles(&b);
        assert_eq!(r1.2, r0.0, "read slab becomes upload source");
        assert_eq!(r1.1, r0.2, "upload slab becomes S-loop input");
        assert_eq!(r1.0, r0.1, "S-loop slab becomes read target");
        assert_ne!(r1.3, r0.3);
        let b = rotate_buffers(b).unwrap();
        assert_eq!(roles(&b).3, r0.3, "two rotations restore device roles");
        let b = rotate_buffers(b).unwrap();
        assert_eq!(roles(&b), (r0.0, r0.1, r0.2, 1 - r0.3));
    }

    #[test]
    fn rotation_preserves_contents() {
        let mut b = BufferSet::new(4);
        let mut v = b.lend_for_read().unwrap();
        v.extend_from_slice(&[1.0, 2.0]);
        let b0 = b.index(HostRole::Read);
        let mut b = rotate_buffers(b).unwrap();
        b.land_read(v).unwrap();
        let b = rotate_buffers(b).unwrap();
        let mut b = rotate_buffers(b).unwrap();
        assert_eq!(b.index(HostRole::Read), b0);
        let v = b.lend_for_read().unwrap();
        assert_eq!(v, vec![1.0, 2.0]);
    }

    #[test]
    fn block_j_uses_slab_j_mod_3() {
        // Iteration b reads block b + 2.
        let mut b = BufferSet::new(0);
        for it in -1i64..20 {
            assert_eq!(b.index(HostRole::Read) as i64, (it + 2).rem_euclid(3));
            assert_eq!(b.alpha() as i64, it.rem_euclid(2));
            b = rotate_buffers(b).unwrap();
        }
    }

    #[test]
    fn misuse_is_rejected() {
        let mut b = BufferSet::new(1);
        let _lent = b.lend_for_read().unwrap();
        assert!(matches!(b.lend_for_read(), Err(PipelineError::IllegalBufferState(_))));
        assert!(b.land_read(vec![]).is_err());
        let b = rotate_buffers(b).unwrap();
        let b = rotate_buffers(b).unwrap();
        // The lent slab now sits in the S-loop role and cannot enter the read role.
        assert!(rotate_buffers(b).is_err());
    }

    #[test]
    fn shared_slab_cannot_be_reclaimed_early() {
        let mut b = BufferSet::new(1);
        let a = b.share_for_upload().unwrap();
        let mut b = rotate_buffers(b).unwrap();
        assert!(b.reclaim_upload().is_err());
        drop(a);
        b.reclaim_upload().unwrap();
        assert!(b.sloop_slab().is_ok());
    }
}
