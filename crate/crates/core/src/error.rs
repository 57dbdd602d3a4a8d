use crate::raster::Dims;
use crate::scene::ObjectId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum Error {
    #[error("object placement clips to an empty mask")]
    EmptyPlacement,
    #[error("unknown object id {0}")]
    UnknownId(ObjectId),
    #[error("scene has no target object")]
    NoTarget,
    #[error("raster dimensions {found:?} do not match {expected:?}")]
    DimensionMismatch { expected: Dims, found: Dims },
    #[error("invalid footprint: {0}")]
    InvalidFootprint(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
