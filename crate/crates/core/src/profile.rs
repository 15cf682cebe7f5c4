use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial and channel sizes shared by every model component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub image_size: usize,
    pub grid: usize,
    pub channels: usize,
}

impl Profile {
    /// 252 px frames on an 18×18 grid with 64 channels.
    pub const fn standard() -> Self {
        Self {
            image_size: 252,
            grid: 18,
            channels: 64,
        }
    }

    /// 126 px frames on a 9×9 grid with 32 channels, for fast runs.
    pub const fn small() -> Self {
        Self {
            image_size: 126,
            grid: 9,
            channels: 32,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "standard" | "default" => Ok(Self::standard()),
            "small" => Ok(Self::small()),
            other => Err(Error::config("profile", format!("unknown profile `{other}`"))),
        }
    }

    pub fn stride(&self) -> usize {
        self.image_size / self.grid
    }

    pub fn cells(&self) -> usize {
        self.grid * self.grid
    }

    /// Width of the expanded tracking model used by the covariance term.
    pub fn expanded_channels(&self) -> usize {
        4 * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.image_size % self.grid != 0 {
            return Err(Error::config(
                "image_size",
                format!("{} is not divisible by grid {}", self.image_size, self.grid),
            ));
        }
        let stride = self.stride();
        if stride < 2 || stride % 2 != 0 {
            return Err(Error::config("grid", format!("stride {stride} must be even")));
        }
        if self.channels % 4 != 0 || self.channels == 0 {
            return Err(Error::config("channels", "must be a positive multiple of 4"));
        }
        Ok(())
    }
}

impl Default for Profile {
    fn default() -> Self {
        Self::standard()
    }
}
