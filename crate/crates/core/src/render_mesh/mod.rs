//! Software rasterizer with differentiable texturing, shading and
//! silhouette antialiasing.

mod raster;
mod shade;

pub use raster::{rasterize, Fragment, FragmentBuffer, ScreenVertex};
pub use shade::{
    render_mesh, shade_fragments, silhouette_aa, MeshGrad, MeshRenderSettings, MeshTape,
    SilhouettePair,
};
