use crate::error::{Error, Result};

/// Non-overlapping square patches tiling an image, indexed row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0 || height == 0 || width == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
            return Err(Error::InvalidShape {
                op: "patch_grid",
                shape: vec![height, width],
                reason: format!("dims must be positive multiples of the patch size {patch}"),
            });
        }
        Ok(PatchGrid { height, width, patch })
    }

    /// Grid for an `[N, C, H, W]` image shape.
    pub fn for_shape(shape: &[usize], patch: usize) -> Result<Self> {
        if shape.len() != 4 {
            return Err(Error::InvalidShape {
                op: "patch_grid",
                shape: shape.to_vec(),
                reason: "expected [N, C, H, W]".into(),
            });
        }
        PatchGrid::new(shape[2], shape[3], patch)
    }

    pub fn rows(&self) -> usize {
        self.height / self.patch
    }

    pub fn cols(&self) -> usize {
        self.width / self.patch
    }

    /// Patch count M.
    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Top-left pixel `(y, x)` of patch `i`.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        ((i / self.cols()) * self.patch, (i % self.cols()) * self.patch)
    }

    pub fn pixels_per_patch(&self) -> usize {
        self.patch * self.patch
    }

    pub fn check(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[2] != self.height || shape[3] != self.width {
            return Err(Error::InvalidShape {
                op: "patch_grid",
                shape: shape.to_vec(),
                reason: format!("grid expects {}x{} images", self.height, self.width),
            });
        }
        Ok(())
    }
}
