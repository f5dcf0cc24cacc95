"""Attack families: statistics sampling, imitation generators, surrogate FGSM."""
