//! Subtree composition applied on reduce: the popped head and dependent
//! representations plus a direction embedding pass through a tanh affine,
//! and the result becomes the new stack entry.

use rand::Rng;

use crate::nn::params::{Init, MatId, ParamStore, VecId};
use crate::nn::tape::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArcDirection {
    Left = 0,
    Right = 1,
}

#[derive(Debug, Clone, Copy)]
pub struct Composer {
    w: MatId,
    b: VecId,
    dir_emb: MatId,
}

impl Composer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, repr_dim: usize, rng: &mut R) -> Self {
        let w = store.add_matrix(&format!("{name}.w"), repr_dim, 3 * repr_dim, Init::Glorot, rng);
        let b = store.add_vector(&format!("{name}.b"), repr_dim);
        let dir_emb = store.add_matrix(&format!("{name}.dir"), 2, repr_dim, Init::Glorot, rng);
        Composer { w, b, dir_emb }
    }

    pub fn compose(
        &self,
        tape: &mut Tape,
        head: NodeId,
        dependent: NodeId,
        direction: ArcDirection,
    ) -> NodeId {
        let dir = tape.embed_row(self.dir_emb, direction as usize);
        let cat = tape.concat3(head, dependent, dir);
        let lin = tape.matvec(self.w, cat);
        let pre = tape.add_param_vec(lin, self.b);
        tape.tanh(pre)
    }
}
