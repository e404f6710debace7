use std::sync::atomic::{AtomicUsize, Ordering};

use super::{ImageGradient, ModelAdapter};
use crate::error::Result;
use crate::tensor::{Embedding, ImageTensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassCounts {
    pub forward: usize,
    pub backward: usize,
}

/// Counts forward (`embed`/`features`) and backward (`vjp`/`pullback`)
/// passes through a wrapped model. Create one per call context; counters are
/// not shared between wrappers.
pub struct CountingModel<M> {
    inner: M,
    forward: AtomicUsize,
    backward: AtomicUsize,
}

impl<M: ModelAdapter> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            forward: AtomicUsize::new(0),
            backward: AtomicUsize::new(0),
        }
    }

    pub fn counts(&self) -> PassCounts {
        PassCounts {
            forward: self.forward.load(Ordering::SeqCst),
            backward: self.backward.load(Ordering::SeqCst),
        }
    }

    pub fn reset(&self) -> PassCounts {
        PassCounts {
            forward: self.forward.swap(0, Ordering::SeqCst),
            backward: self.backward.swap(0, Ordering::SeqCst),
        }
    }

    pub fn into_inner(self) -> M {
        self.inner
    }
}

impl<M: ModelAdapter> ModelAdapter for CountingModel<M> {
    fn input_shape(&self) -> (usize, usize) {
        self.inner.input_shape()
    }

    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    fn model_id(&self) -> String {
        self.inner.model_id()
    }

    fn features(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.forward.fetch_add(1, Ordering::SeqCst);
        self.inner.features(image)
    }

    fn pullback(
        &self,
        image: &ImageTensor,
        seed: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        self.backward.fetch_add(1, Ordering::SeqCst);
        self.inner.pullback(image, seed)
    }

    fn embed(&self, image: &ImageTensor) -> Result<Embedding> {
        self.forward.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(image)
    }

    fn vjp(&self, image: &ImageTensor, w: &[f64]) -> Result<ImageGradient> {
        self.backward.fetch_add(1, Ordering::SeqCst);
        self.inner.vjp(image, w)
    }
}
