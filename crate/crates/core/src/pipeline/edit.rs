use super::checkpoint::Checkpoint;
use super::coarse::CoarseSession;
use super::fine::FineSession;
use super::stage::IterRecord;
use crate::error::Result;
use crate::guidance::{ConditionSet, GuidanceModel};

/// Both results of an edit: the continued neural field and the refined
/// mesh built from it.
#[derive(Clone, Debug)]
pub struct EditResult {
    pub field: Checkpoint,
    pub mesh: Checkpoint,
}

/// Editing workflow from a coarse checkpoint: continue the neural field
/// under `guidance` with `new_cond`, then initialize and refine a mesh with
/// the same prior and condition.
pub fn edit_from_coarse_with(
    ckpt: &Checkpoint,
    guidance: &dyn GuidanceModel,
    new_cond: &ConditionSet,
    mut observer: impl FnMut(&IterRecord),
) -> Result<EditResult> {
    let mut nerf = CoarseSession::edit_from(ckpt)?;
    nerf.run(guidance, new_cond, &mut observer)?;
    let field = nerf.checkpoint();
    let mut mesh = FineSession::from_coarse(&field)?;
    mesh.run(guidance, new_cond, &mut observer)?;
    Ok(EditResult {
        field,
        mesh: mesh.checkpoint(),
    })
}

pub fn edit_from_coarse(ckpt: &Checkpoint, guidance: &dyn GuidanceModel, new_cond: &ConditionSet) -> Result<Checkpoint> {
    Ok(edit_from_coarse_with(ckpt, guidance, new_cond, |r| log::debug!("{}", r.to_json_line()))?.mesh)
}
