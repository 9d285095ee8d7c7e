use crate::error::{Error, Result};
use crate::tensor::conv_output_dim;

/// Architecture and loss hyper-parameters of a vector CapsNet.
///
/// [`CapsNetConfig::new`] gives the standard MNIST architecture: a 256-channel
/// 9x9 convolution, 32 channels of 8-dimensional primary capsules (9x9,
/// stride 2), one 16-dimensional digit capsule per class, three routing
/// iterations and a 512-1024 fully connected decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsNetConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub primary_caps: usize,
    pub primary_dim: usize,
    pub primary_kernel: usize,
    pub primary_stride: usize,
    pub num_classes: usize,
    pub digit_dim: usize,
    pub routing_iterations: usize,
    pub decoder_hidden: [usize; 2],
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda_down: f64,
    pub recon_loss_weight: f64,
}

impl CapsNetConfig {
    pub fn new(input_shape: (usize, usize, usize), num_classes: usize) -> Self {
        let (input_channels, input_height, input_width) = input_shape;
        Self {
            input_channels,
            input_height,
            input_width,
            conv1_channels: 256,
            conv1_kernel: 9,
            conv1_stride: 1,
            primary_caps: 32,
            primary_dim: 8,
            primary_kernel: 9,
            primary_stride: 2,
            num_classes,
            digit_dim: 16,
            routing_iterations: 3,
            decoder_hidden: [512, 1024],
            m_plus: 0.9,
            m_minus: 0.1,
            lambda_down: 0.5,
            recon_loss_weight: 0.0005,
        }
    }

    /// 28x28 grayscale input.
    pub fn mnist(num_classes: usize) -> Self {
        Self::new((1, 28, 28), num_classes)
    }

    /// An 8x8 network with 4-dimensional capsules, small enough for
    /// finite-difference gradient checks. Same code path as the full model.
    pub fn tiny(num_classes: usize) -> Self {
        Self {
            input_channels: 1,
            input_height: 8,
            input_width: 8,
            conv1_channels: 4,
            conv1_kernel: 3,
            conv1_stride: 1,
            primary_caps: 2,
            primary_dim: 4,
            primary_kernel: 3,
            primary_stride: 2,
            num_classes,
            digit_dim: 4,
            routing_iterations: 3,
            decoder_hidden: [8, 12],
            ..Self::new((1, 8, 8), num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("conv1_channels", self.conv1_channels),
            ("conv1_kernel", self.conv1_kernel),
            ("conv1_stride", self.conv1_stride),
            ("primary_caps", self.primary_caps),
            ("primary_dim", self.primary_dim),
            ("primary_kernel", self.primary_kernel),
            ("primary_stride", self.primary_stride),
            ("num_classes", self.num_classes),
            ("digit_dim", self.digit_dim),
            ("routing_iterations", self.routing_iterations),
            ("decoder_hidden[0]", self.decoder_hidden[0]),
            ("decoder_hidden[1]", self.decoder_hidden[1]),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0 < self.m_minus && self.m_minus < self.m_plus && self.m_plus < 1.0) {
            return Err(Error::Config(format!(
                "margins must satisfy 0 < m_minus < m_plus < 1, got {} and {}",
                self.m_minus, self.m_plus
            )));
        }
        if !(self.lambda_down > 0.0 && self.lambda_down <= 1.0) {
            return Err(Error::Config(format!(
                "lambda_down must lie in (0, 1], got {}",
                self.lambda_down
            )));
        }
        if !(self.recon_loss_weight >= 0.0 && self.recon_loss_weight.is_finite()) {
            return Err(Error::Config(format!(
                "recon_loss_weight must be a finite non-negative number, got {}",
                self.recon_loss_weight
            )));
        }
        self.primary_grid().map(|_| ())
    }

    /// Spatial size of the conv1 feature map.
    pub fn conv1_output(&self) -> Result<(usize, usize)> {
        let h = conv_output_dim(self.input_height, self.conv1_kernel, self.conv1_stride);
        let w = conv_output_dim(self.input_width, self.conv1_kernel, self.conv1_stride);
        h.zip(w).ok_or_else(|| {
            Error::Config(format!(
                "conv1 kernel {} does not fit a {}x{} input",
                self.conv1_kernel, self.input_height, self.input_width
            ))
        })
    }

    /// Spatial size of the primary-capsule grid.
    pub fn primary_grid(&self) -> Result<(usize, usize)> {
        let (h, w) = self.conv1_output()?;
        let gh = conv_output_dim(h, self.primary_kernel, self.primary_stride);
        let gw = conv_output_dim(w, self.primary_kernel, self.primary_stride);
        gh.zip(gw).ok_or_else(|| {
            Error::Config(format!(
                "primary capsule kernel {} does not fit the {h}x{w} conv1 map",
                self.primary_kernel
            ))
        })
    }

    /// Number of primary (child) capsules routed to the digit capsules.
    pub fn num_primary_capsules(&self) -> Result<usize> {
        let (gh, gw) = self.primary_grid()?;
        Ok(self.primary_caps * gh * gw)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_channels, self.input_height, self.input_width]
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_height * self.input_width
    }
}

/// Named network sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Architecture {
    /// The full network of [`CapsNetConfig::new`].
    #[default]
    Standard,
    /// The layer sizes of [`CapsNetConfig::tiny`]; for smoke tests and fixtures.
    Tiny,
}

impl Architecture {
    pub fn id(self) -> &'static str {
        match self {
            Architecture::Standard => "standard",
            Architecture::Tiny => "tiny",
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "standard" => Ok(Architecture::Standard),
            "tiny" => Ok(Architecture::Tiny),
            other => Err(Error::Config(format!(
                "unknown architecture `{other}` (known: standard, tiny)"
            ))),
        }
    }

    pub fn config(self, input_shape: [usize; 3], num_classes: usize) -> CapsNetConfig {
        let [c, h, w] = input_shape;
        match self {
            Architecture::Standard => CapsNetConfig::new((c, h, w), num_classes),
            Architecture::Tiny => CapsNetConfig {
                input_channels: c,
                input_height: h,
                input_width: w,
                ..CapsNetConfig::tiny(num_classes)
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnist_has_1152_primary_capsules() {
        let cfg = CapsNetConfig::mnist(9);
        cfg.validate().unwrap();
        assert_eq!(cfg.conv1_output().unwrap(), (20, 20));
        assert_eq!(cfg.primary_grid().unwrap(), (6, 6));
        assert_eq!(cfg.num_primary_capsules().unwrap(), 6 * 6 * 32);
    }

    #[test]
    fn norb_crops_give_an_8x8_grid() {
        let cfg = CapsNetConfig::new((1, 32, 32), 4);
        assert_eq!(cfg.primary_grid().unwrap(), (8, 8));
    }

    #[test]
    fn tiny_config_is_valid() {
        let cfg = CapsNetConfig::tiny(2);
        cfg.validate().unwrap();
        assert_eq!(cfg.num_primary_capsules().unwrap(), 8);
    }

    #[test]
    fn rejects_bad_margins_and_sizes() {
        let mut cfg = CapsNetConfig::mnist(3);
        cfg.m_minus = 0.95;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = CapsNetConfig::mnist(3);
        cfg.routing_iterations = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = CapsNetConfig::mnist(3);
        cfg.lambda_down = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = CapsNetConfig::mnist(3);
        cfg.input_height = 12;
        assert!(cfg.validate().is_err());
    }
}
