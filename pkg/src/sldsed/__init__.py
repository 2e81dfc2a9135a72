"""Sound event detection trained on sequential (order-only) labels.

Stage 1 tags each clip with a CTC-trained convolutional-recurrent network; stage 2
splits the network's bottleneck frames into background and foreground and times
each decoded tag against the foreground frames.
"""

__version__ = "0.1.0"
