//! Built-in experiment configurations.

pub struct ConfigPreset {
    pub name: &'static str,
    pub description: &'static str,
    pub text: &'static str,
}

pub const PRESETS: &[ConfigPreset] = &[
    ConfigPreset {
        name: "walkers-lattice",
        description: "persistent walkers against the exact lattice recurrence, three seeds",
        text: "scenario = simulate
variant = linear
speed = 1
flip_rate = 1
x_min = -4
x_max = 4
nx = 161
dt = 0.05
nt = 41
walkers = 100000
seeds = 3
initial = gaussian 0 0.5 1
",
    },
    ConfigPreset {
        name: "walkers-telegrapher",
        description: "persistent walkers against the telegrapher equation",
        text: "scenario = simulate
variant = linear
compare = telegrapher
speed = 1
flip_rate = 1
x_min = -6
x_max = 6
nx = 241
dt = 0.05
nt = 41
walkers = 100000
initial = gaussian 0 0.5 1
",
    },
    ConfigPreset {
        name: "heat-symmetry",
        description: "heat algebra commutators and invariance of a diffusion solution, with the t*d/dx control",
        text: "scenario = symmetry-check
algebra = heat
equation = diffusion
d = 1
x_min = -8
x_max = 8
nx = 321
dt = 0.0005
nt = 2001
t0 = 1
initial = gaussian 0 1.4142135623730951 1
epsilons = 0.1, 0.2
control = yes
",
    },
    ConfigPreset {
        name: "maxwell-refinement",
        description: "Maxwell potentials driven by a Gaussian pulse, three refinement levels",
        text: "scenario = solve
equation = maxwell
c = 1
source = pulse 1 0 0.7 2
x_min = -6
x_max = 6
nx = 301
dt = 0.04
nt = 51
initial = zero
initial2 = zero
refine = 3
",
    },
    ConfigPreset {
        name: "two-speed-refinement",
        description: "two-speed system, residual of the iterated telegrapher equation under refinement",
        text: "scenario = solve
equation = two-speed
v = 1
a = 1
x_min = -6
x_max = 6
nx = 301
dt = 0.04
nt = 26
initial = gaussian -0.5 0.6 1
initial2 = gaussian 0.5 0.8 0.5
refine = 3
",
    },
    ConfigPreset {
        name: "power-law-similarity",
        description: "power-law similarity solution (k = 2) checked against a direct solve",
        text: "scenario = similarity
preset = power-law-k2
x_min = -6
x_max = 6
nx = 601
dt = 5e-5
nt = 2001
compare_solve = yes
",
    },
    ConfigPreset {
        name: "erf-hodograph",
        description: "hodograph equation on the erf heat solution, three refinement levels",
        text: "scenario = hodograph
source = erf
x_min = -3
x_max = 3
nx = 1201
dt = 0.02
nt = 5
t0 = 1
p_min = -0.6
p_max = 0.6
p_points = 61
refine = 3
",
    },
    ConfigPreset {
        name: "full-report",
        description: "walkers, heat symmetries, erf similarity and hodograph in one run",
        text: "scenario = full-report
",
    },
];

pub fn find(name: &str) -> Option<&'static ConfigPreset> {
    PRESETS.iter().find(|p| p.name == name)
}
