"""parattack: black-box adversarial paraphrasing via PPO in a sentence-latent
space, with the evaluation protocol and latent-geometry diagnostics."""

__version__ = "0.1.0"
