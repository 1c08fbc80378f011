//! Task-specific resource trust: binary idle, storage and energy gates.
//!
//! Forwarding devices pay first-order radio energy to receive and retransmit
//! the task. Edge devices pay `epsilon * f^2 * c_des * c_size` with the CPU
//! frequency `f` in GHz.

use serde::{Deserialize, Serialize};

use crate::domain::{Device, Task};
use crate::error::{Error, Result};

/// First-order radio energy model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadioModel {
    /// Electronics energy, J/bit.
    pub e_elec: f64,
    /// Amplifier energy, J/bit/m^2.
    pub e_amp: f64,
}

impl Default for RadioModel {
    fn default() -> Self {
        RadioModel {
            e_elec: 50e-9,
            e_amp: 100e-12,
        }
    }
}

impl RadioModel {
    pub fn new(e_elec: f64, e_amp: f64) -> Result<Self> {
        if !(e_elec > 0.0 && e_amp > 0.0) {
            return Err(Error::invalid("radio energies must be positive"));
        }
        Ok(RadioModel { e_elec, e_amp })
    }

    pub fn receive_energy(&self, bits: f64) -> f64 {
        self.e_elec * bits
    }

    pub fn transmit_energy(&self, bits: f64, distance: f64) -> f64 {
        self.e_elec * bits + self.e_amp * bits * distance * distance
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourceConfig {
    pub radio: RadioModel,
    /// Energy per cycle scaling for edge execution, with CPU frequency in GHz.
    pub epsilon: f64,
}

impl Default for ResourceConfig {
    fn default() -> Self {
        ResourceConfig {
            radio: RadioModel::default(),
            epsilon: 1e-11,
        }
    }
}

pub fn idle_gate(device: &Device) -> u8 {
    u8::from(device.idle)
}

pub fn storage_gate(device: &Device, task: &Task) -> u8 {
    u8::from(device.storage_avail >= task.c_size)
}

/// Energy a relay needs to receive the task and forward it `distance` meters.
pub fn relay_energy(task: &Task, distance: f64, radio: &RadioModel) -> f64 {
    radio.receive_energy(task.c_size) + radio.transmit_energy(task.c_size, distance)
}

/// Energy an edge device spends executing the task.
pub fn execution_energy(device: &Device, task: &Task, epsilon: f64) -> f64 {
    epsilon * device.cpu_freq * device.cpu_freq * task.c_des * task.c_size
}

pub fn resource_trust_tf(device: &Device, task: &Task, next_hop_distance: f64, radio: &RadioModel) -> u8 {
    let energy = u8::from(device.energy_avail >= relay_energy(task, next_hop_distance, radio));
    idle_gate(device) * storage_gate(device, task) * energy
}

pub fn resource_trust_ec(device: &Device, task: &Task, epsilon: f64) -> u8 {
    let energy = u8::from(device.energy_avail >= execution_energy(device, task, epsilon));
    idle_gate(device) * storage_gate(device, task) * energy
}
