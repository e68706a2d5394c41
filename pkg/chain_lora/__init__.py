"""Chain-of-LoRA residual low-rank training and trace-norm Frank-Wolfe at desk scale."""
