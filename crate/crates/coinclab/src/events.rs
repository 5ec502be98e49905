//! Photon event records, before and after detection.

use serde::{Deserialize, Serialize};

/// Spectrometer stripe a photon lands on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stripe {
    Herald,
    Signal,
}

impl Stripe {
    /// Single-letter label used in the event CSV.
    pub fn label(self) -> char {
        match self {
            Stripe::Herald => 'H',
            Stripe::Signal => 'S',
        }
    }

    pub fn from_label(s: &str) -> Option<Stripe> {
        match s {
            "H" => Some(Stripe::Herald),
            "S" => Some(Stripe::Signal),
            _ => None,
        }
    }
}

/// Truth tag carried by every event through the whole chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OriginTag {
    /// One photon of an emitted pair.
    SourcePair,
    /// Stray light following the stripe's background spectrum.
    Thermal,
    /// Dark count, spectrally flat across the stripe.
    DarkCount,
}

impl OriginTag {
    /// Single-letter label used in the event CSV.
    pub fn label(self) -> char {
        match self {
            OriginTag::SourcePair => 'P',
            OriginTag::Thermal => 'T',
            OriginTag::DarkCount => 'D',
        }
    }

    pub fn from_label(s: &str) -> Option<OriginTag> {
        match s {
            "P" => Some(OriginTag::SourcePair),
            "T" => Some(OriginTag::Thermal),
            "D" => Some(OriginTag::DarkCount),
            _ => None,
        }
    }
}

/// Event id helpers. Ids encode the origin stream in the two low bits so the
/// simulator's independent streams can never collide: a pair with sequence
/// number k owns ids 4k (herald photon) and 4k+1 (signal photon), background
/// event k on a stripe owns 4k+2 (herald) or 4k+3 (signal).
pub mod ids {
    pub fn pair_herald(seq: u32) -> u32 {
        seq * 4
    }

    pub fn pair_signal(seq: u32) -> u32 {
        seq * 4 + 1
    }

    pub fn background(stripe: super::Stripe, seq: u32) -> u32 {
        match stripe {
            super::Stripe::Herald => seq * 4 + 2,
            super::Stripe::Signal => seq * 4 + 3,
        }
    }
}

/// A photon as emitted, before any detector effect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotonEvent {
    pub event_id: u32,
    /// Pair sequence number for pair photons, `None` for background.
    pub pair_id: Option<u32>,
    pub stripe: Stripe,
    pub origin: OriginTag,
    /// Emission wavelength, nm.
    pub true_wavelength: f64,
    /// Emission time, ns from run start.
    pub true_time: f64,
}

/// A photon after detection: quantized time tag and pixel coordinates on the
/// sensor. Wavelength survives only through the pixel column; use
/// [`crate::detector::StripeCalib::pixel_to_wavelength`] to read it back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectedEvent {
    pub event_id: u32,
    pub pair_id: Option<u32>,
    pub stripe: Stripe,
    pub origin: OriginTag,
    pub x_pix: u16,
    pub y_pix: u16,
    /// Time of arrival, ns, on the quantizer grid.
    pub toa: f64,
}
