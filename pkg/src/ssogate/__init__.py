"""ssogate: an AAA WebSSO gateway suite.

Authentication portal, reverse-proxy protection handlers, CAS and OpenID
Connect federation, a plugin engine, structured accounting and an
administration API.
"""

__version__ = "0.1.0"
