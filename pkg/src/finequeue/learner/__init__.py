"""Iterated best response with proximal policy optimization.

:mod:`finequeue.learner.network` holds the actor and critic networks and
:mod:`finequeue.learner.ppo` the training loop.
"""
